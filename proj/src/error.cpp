#include "pcdesc/error.hpp"

namespace pcdesc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::DegenerateBatch: return "degenerate-batch";
    case ErrorCode::DegenerateSample: return "degenerate-sample";
    case ErrorCode::InsufficientMatches: return "insufficient-matches";
    case ErrorCode::NumericError: return "numeric-error";
    case ErrorCode::Configuration: return "configuration";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::Configuration:
    case ErrorCode::Io:
      return 2;
    case ErrorCode::Parse:
      return 3;
    case ErrorCode::NumericError:
      return 4;
    case ErrorCode::DegenerateBatch:
    case ErrorCode::DegenerateSample:
    case ErrorCode::InsufficientMatches:
      return 5;
  }
  return 1;
}

}  // namespace pcdesc
