#include "pcdesc/geometry.hpp"

#include "pcdesc/error.hpp"
#include "pcdesc/neighbor_index.hpp"

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace pcdesc {

PointMatrix PointCloud::as_matrix() const {
  PointMatrix m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = points[i];
  return m;
}

PointCloud PointCloud::from_matrix(const PointMatrix& m) {
  PointCloud c;
  c.points.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) c.points.emplace_back(m.row(i).transpose());
  return c;
}

Point3 PointCloud::centroid() const {
  Point3 sum = Point3::Zero();
  for (const auto& p : points) sum += p;
  return points.empty() ? sum : Point3(sum / static_cast<double>(points.size()));
}

void validate_cloud(const PointCloud& cloud) {
  require(!cloud.empty(), ErrorCode::InvalidArgument, "point cloud is empty");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!cloud[i].allFinite())
      fail(ErrorCode::InvalidArgument, "point " + std::to_string(i) + " has non-finite coordinates");
  }
}

RigidTransform RigidTransform::from_yaw_deg(double yaw_deg, const Eigen::Vector3d& t) {
  return from_axis_angle(Eigen::Vector3d::UnitZ(), yaw_deg * std::numbers::pi / 180.0, t);
}

RigidTransform RigidTransform::from_axis_angle(const Eigen::Vector3d& axis, double angle_rad,
                                               const Eigen::Vector3d& t) {
  RigidTransform T;
  T.rotation = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
  T.translation = t;
  return T;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& T) {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(T.apply(p));
  return out;
}

CenteredCloud center_cloud(const PointCloud& cloud) {
  validate_cloud(cloud);
  CenteredCloud out{cloud, cloud.centroid()};
  for (auto& p : out.cloud.points) p -= out.centroid;
  return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double grid) {
  require(grid > 0.0 && std::isfinite(grid), ErrorCode::InvalidArgument,
          "voxel_downsample: grid must be positive");
  validate_cloud(cloud);
  struct Cell {
    Point3 sum = Point3::Zero();
    std::size_t count = 0;
  };
  std::map<std::array<std::int64_t, 3>, Cell> cells;
  for (const auto& p : cloud.points) {
    const std::array<std::int64_t, 3> key{static_cast<std::int64_t>(std::floor(p.x() / grid)),
                                          static_cast<std::int64_t>(std::floor(p.y() / grid)),
                                          static_cast<std::int64_t>(std::floor(p.z() / grid))};
    auto& cell = cells[key];
    cell.sum += p;
    ++cell.count;
  }
  PointCloud out;
  out.points.reserve(cells.size());
  for (const auto& [key, cell] : cells) out.points.push_back(cell.sum / static_cast<double>(cell.count));
  return out;
}

SampledCloud random_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
  require(n >= 1 && n <= cloud.size(), ErrorCode::InvalidArgument,
          "random_sample: n must lie in [1, N]");
  std::vector<std::size_t> perm(cloud.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, perm.size() - 1);
    std::swap(perm[i], perm[pick(rng)]);
  }
  perm.resize(n);
  SampledCloud out;
  out.indices = std::move(perm);
  out.cloud.points.reserve(n);
  for (auto idx : out.indices) out.cloud.points.push_back(cloud[idx]);
  return out;
}

SyntheticPair synth_pair(const PointCloud& cloud, double max_yaw_deg, double sigma_noise,
                         std::uint64_t seed) {
  require(sigma_noise >= 0.0, ErrorCode::InvalidArgument, "synth_pair: sigma_noise must be >= 0");
  std::mt19937_64 rng(seed);
  double yaw = 0.0;
  if (max_yaw_deg > 0.0) yaw = std::uniform_real_distribution<double>(-max_yaw_deg, max_yaw_deg)(rng);
  SyntheticPair out;
  out.transform = yaw == 0.0 ? RigidTransform::identity() : RigidTransform::from_yaw_deg(yaw);
  out.cloud = apply_transform(cloud, out.transform);
  if (sigma_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma_noise);
    for (auto& p : out.cloud.points)
      for (int d = 0; d < 3; ++d) p[d] += noise(rng);
  }
  return out;
}

std::size_t CorrespondenceMatrix::positives() const {
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) n += m.data()[i];
  return n;
}

CorrespondenceMatrix gt_correspondences(const PointCloud& P, const PointCloud& P2,
                                        const RigidTransform& T, double tau) {
  require(tau > 0.0, ErrorCode::InvalidArgument, "gt_correspondences: tau must be positive");
  validate_cloud(P);
  validate_cloud(P2);
  CorrespondenceMatrix M;
  M.tau = tau;
  M.m.setZero(static_cast<Eigen::Index>(P.size()), static_cast<Eigen::Index>(P2.size()));
  const NeighborIndex index(P);
  for (std::size_t j = 0; j < P2.size(); ++j) {
    // widened search, then the exact strict test on the Euclidean norm
    for (const auto& nb : index.radius(T.apply(P2[j]), tau * (1.0 + 1e-9)))
      if (nb.distance < tau)
        M.m(static_cast<Eigen::Index>(nb.index), static_cast<Eigen::Index>(j)) = 1;
  }
  return M;
}

}  // namespace pcdesc
