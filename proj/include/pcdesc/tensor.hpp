#pragma once

#include "pcdesc/error.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace pcdesc::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Throws numeric-error naming `what` when any entry is NaN or infinite.
template <class T>
void check_finite(const Mat<T>& m, const std::string& what) {
  if (!m.allFinite()) fail(ErrorCode::NumericError, "non-finite values in " + what);
}

inline void check_shape(bool ok, const std::string& what) {
  require(ok, ErrorCode::InvalidArgument, "shape mismatch: " + what);
}

/// Row-major float array with an explicit shape; the serialized form of a parameter.
struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

template <class T>
Tensor to_tensor(const Mat<T>& m) {
  Tensor t;
  t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

/// Visits every named matrix of a parameter struct with f(name, matrix).
template <class Params, class F>
void for_each_param(Params& p, F&& f) {
  p.visit(std::string{}, f);
}

template <class Params>
Params zeros_like(const Params& p) {
  Params z = p;
  for_each_param(z, [](const std::string&, auto& m) { m.setZero(); });
  return z;
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace pcdesc::nn
