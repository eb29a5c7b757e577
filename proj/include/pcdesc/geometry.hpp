#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

namespace pcdesc {

using Point3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Ordered set of 3D points in meters; z is the upright axis. Point indices
/// are meaningful: correspondences, keypoints and descriptors refer to them.
struct PointCloud {
  std::vector<Point3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> pts) : points(std::move(pts)) {}

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }

  PointMatrix as_matrix() const;
  static PointCloud from_matrix(const PointMatrix& m);
  Point3 centroid() const;
};

/// Throws invalid-argument unless the cloud is non-empty with finite coordinates.
void validate_cloud(const PointCloud& cloud);

/// SE(3) pose. apply(p) = R p + t.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_yaw_deg(double yaw_deg,
                                     const Eigen::Vector3d& t = Eigen::Vector3d::Zero());
  static RigidTransform from_axis_angle(const Eigen::Vector3d& axis, double angle_rad,
                                        const Eigen::Vector3d& t = Eigen::Vector3d::Zero());

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;

  /// R Rᵀ = I and det R = 1 within tol.
  bool is_valid(double tol = 1e-9) const;
  Eigen::Matrix4d matrix() const;
};

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& T);

struct CenteredCloud {
  PointCloud cloud;
  Point3 centroid;
};

CenteredCloud center_cloud(const PointCloud& cloud);

/// One centroid per occupied voxel, ordered lexicographically by voxel key.
PointCloud voxel_downsample(const PointCloud& cloud, double grid = 0.2);

struct SampledCloud {
  PointCloud cloud;
  std::vector<std::size_t> indices;  // into the source cloud
};

/// n distinct points, uniform without replacement.
SampledCloud random_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);

struct SyntheticPair {
  PointCloud cloud;          // yaw(cloud) + noise
  RigidTransform transform;  // maps the source into the returned cloud (no noise)
};

/// Rotates about the upright axis by a yaw drawn uniformly from
/// [-max_yaw, max_yaw] degrees and adds i.i.d. Gaussian noise per coordinate.
SyntheticPair synth_pair(const PointCloud& cloud, double max_yaw_deg, double sigma_noise,
                         std::uint64_t seed);

/// Binary N×N' matrix with M(i,j) = 1 iff ‖p_i − T·p'_j‖ < tau.
struct CorrespondenceMatrix {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m;
  double tau = 0.5;

  Eigen::Index rows() const { return m.rows(); }
  Eigen::Index cols() const { return m.cols(); }
  std::uint8_t operator()(Eigen::Index i, Eigen::Index j) const { return m(i, j); }
  std::size_t positives() const;
};

/// T maps points of P2 into the frame of P.
CorrespondenceMatrix gt_correspondences(const PointCloud& P, const PointCloud& P2,
                                        const RigidTransform& T, double tau = 0.5);

}  // namespace pcdesc
