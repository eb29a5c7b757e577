#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcdesc::gradcheck {

struct Options {
  double h = 1e-5;          // central-difference step
  double tolerance = 1e-4;  // max relative error per block
  std::uint64_t seed = 1;
};

/// One differentiated quantity: a named parameter of a layer or loss, or
/// the gradient with respect to its input.
struct BlockReport {
  std::string block;      // layer or loss, e.g. "flexconv"
  std::string parameter;  // e.g. "theta", "input"
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Runs every layer and loss in 64-bit on seeded toy shapes and compares the
/// analytic gradients with central finite differences. The relative error of
/// a block is max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-6); the floor
/// covers blocks whose exact gradient is zero (a bias under a softmax).
std::vector<BlockReport> run_all(const Options& opt = {});

bool all_passed(const std::vector<BlockReport>& reports);

}  // namespace pcdesc::gradcheck
