// Shared fixtures and brute-force reference implementations for the tests.
#pragma once

#include "pcdesc/error.hpp"
#include "pcdesc/geometry.hpp"
#include "pcdesc/neighbor_index.hpp"
#include "pcdesc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace pcdesc::testing {

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 5.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = Point3(u(rng), u(rng), u(rng));
  return PointCloud(std::move(pts));
}

template <class T>
nn::Mat<T> random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  nn::Mat<T> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(n(rng));
  return m;
}

template <class T>
nn::Mat<T> random_unit_rows(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  nn::Mat<T> m = random_mat<T>(r, c, seed);
  for (Eigen::Index i = 0; i < r; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

inline RigidTransform random_transform(std::uint64_t seed, double max_t = 10.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-max_t, max_t);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  RigidTransform T;
  T.rotation = q.toRotationMatrix();
  T.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
  return T;
}

/// Every point sorted by (distance, index), truncated to k.
inline std::vector<Neighbor> brute_knn(const std::vector<Point3>& pts, const Point3& q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, (pts[i] - q).norm()});
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  });
  all.resize(std::min(k, all.size()));
  return all;
}

template <class F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(-1);
}

inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline PointCloud permute(const PointCloud& c, const std::vector<std::size_t>& p) {
  PointCloud out;
  for (auto i : p) out.points.push_back(c[i]);
  return out;
}

template <class T>
nn::Mat<T> permute_rows(const nn::Mat<T>& m, const std::vector<std::size_t>& p) {
  nn::Mat<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < p.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(p[i]));
  return out;
}

}  // namespace pcdesc::testing
