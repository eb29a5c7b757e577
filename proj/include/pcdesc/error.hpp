#pragma once

#include <stdexcept>
#include <string>

namespace pcdesc {

enum class ErrorCode {
  InvalidArgument,
  DegenerateBatch,
  DegenerateSample,
  InsufficientMatches,
  NumericError,
  Configuration,
  Parse,
  Io,
};

const char* to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code selects
/// the CLI exit status (see exit_code()).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// 0 success, 2 configuration, 3 parse, 4 numeric, 5 insufficient data.
int exit_code(ErrorCode code);

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace pcdesc
