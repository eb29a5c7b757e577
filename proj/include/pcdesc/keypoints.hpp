#pragma once

#include "pcdesc/geometry.hpp"

#include <span>
#include <vector>

namespace pcdesc::kp {

struct Keypoint {
  std::size_t index = 0;
  double score = 0.0;

  bool operator==(const Keypoint&) const = default;
};

/// Descending score order; indices unique.
using KeypointSet = std::vector<Keypoint>;

/// Greedy non-maximum suppression: repeatedly takes the highest-scoring point
/// (ties by lower index) farther than nms_radius from every point already
/// taken, until m points or exhaustion. nms_radius = 0 gives plain top-m.
/// m > N returns every eligible point and logs a warning.
KeypointSet select_keypoints(std::span<const double> scores, const PointCloud& cloud, std::size_t m,
                             double nms_radius = 0.5);

std::vector<Point3> keypoint_positions(const KeypointSet& k, const PointCloud& cloud);

/// Fraction of K whose image under T lies within `radius` (strictly) of
/// some point of K2. T maps the frame of K into the frame of K2.
double relative_repeatability(const std::vector<Point3>& K, const std::vector<Point3>& K2, const RigidTransform& T,
                              double radius = 0.5);

double relative_repeatability(const KeypointSet& K, const PointCloud& P, const KeypointSet& K2,
                              const PointCloud& P2, const RigidTransform& T, double radius = 0.5);

}  // namespace pcdesc::kp
