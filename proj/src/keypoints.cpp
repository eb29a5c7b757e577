#include "pcdesc/keypoints.hpp"

#include "pcdesc/error.hpp"
#include "pcdesc/neighbor_index.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>

namespace pcdesc::kp {

KeypointSet select_keypoints(std::span<const double> scores, const PointCloud& cloud, std::size_t m,
                             double nms_radius) {
  require(m >= 1, ErrorCode::InvalidArgument, "select_keypoints: m must be >= 1");
  require(scores.size() == cloud.size(), ErrorCode::InvalidArgument, "select_keypoints: score count differs from cloud size");
  require(nms_radius >= 0.0, ErrorCode::InvalidArgument, "select_keypoints: nms radius must be >= 0");
  const std::size_t n = cloud.size();
  if (m > n) {
    spdlog::warn("select_keypoints: requested {} keypoints from {} points; returning all eligible", m, n);
    m = n;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  KeypointSet out;
  if (nms_radius == 0.0) {
    for (std::size_t i = 0; i < m; ++i) out.push_back({order[i], scores[order[i]]});
    return out;
  }
  NeighborIndex index(cloud);
  std::vector<std::uint8_t> suppressed(n, 0);
  for (std::size_t i : order) {
    if (out.size() >= m) break;
    if (suppressed[i]) continue;
    out.push_back({i, scores[i]});
    for (const auto& nb : index.radius(cloud[i], nms_radius)) suppressed[nb.index] = 1;
  }
  return out;
}

std::vector<Point3> keypoint_positions(const KeypointSet& k, const PointCloud& cloud) {
  std::vector<Point3> out;
  out.reserve(k.size());
  for (const auto& p : k) {
    require(p.index < cloud.size(), ErrorCode::InvalidArgument, "keypoint index out of range");
    out.push_back(cloud[p.index]);
  }
  return out;
}

double relative_repeatability(const std::vector<Point3>& K, const std::vector<Point3>& K2, const RigidTransform& T,
                              double radius) {
  require(!K.empty() && !K2.empty(), ErrorCode::InvalidArgument, "relative_repeatability: empty keypoint set");
  require(radius > 0.0, ErrorCode::InvalidArgument, "relative_repeatability: radius must be > 0");
  NeighborIndex index{PointCloud(K2)};
  std::size_t rep = 0;
  for (const auto& p : K) {
    const auto nb = index.nearest(T.apply(p));
    if (nb.distance < radius) ++rep;
  }
  return static_cast<double>(rep) / static_cast<double>(K.size());
}

double relative_repeatability(const KeypointSet& K, const PointCloud& P, const KeypointSet& K2,
                              const PointCloud& P2, const RigidTransform& T, double radius) {
  return relative_repeatability(keypoint_positions(K, P), keypoint_positions(K2, P2), T, radius);
}

}  // namespace pcdesc::kp
