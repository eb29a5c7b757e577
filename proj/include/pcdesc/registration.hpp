#pragma once

#include "pcdesc/geometry.hpp"
#include "pcdesc/tensor.hpp"

#include <cstdint>
#include <vector>

namespace pcdesc::reg {

struct Match {
  std::size_t a = 0;  // row of descriptor set A
  std::size_t b = 0;  // row of descriptor set B
  double distance = 0.0;

  bool operator==(const Match&) const = default;
};

using MatchSet = std::vector<Match>;

enum class MatchMode { Nearest, Mutual };

const char* to_string(MatchMode m);
MatchMode match_mode_from_string(const std::string& s);

/// Nearest B row for every A row (ties by lower index). Mutual mode keeps
/// only pairs that are each other's nearest neighbor. Output is ordered by A row.
template <class T>
MatchSet match_descriptors(const nn::Mat<T>& a, const nn::Mat<T>& b, MatchMode mode);

/// Least-squares T with T·a_i ≈ b_i (weighted Kabsch with reflection guard).
/// Throws degenerate-sample on fewer than three pairs or collinear points.
RigidTransform rigid_solve(const std::vector<Point3>& a, const std::vector<Point3>& b,
                           const std::vector<double>& weights = {});

/// Half the cross product norm of the triangle (p, q, r).
double triangle_area(const Point3& p, const Point3& q, const Point3& r);

struct RansacConfig {
  double inlier_threshold = 0.5;  // meters
  int max_iterations = 10000;
  double confidence = 0.99;
  double min_sample_area = 1e-6;  // square meters
  int threads = 1;                // hypotheses scored concurrently
  int chunk = 64;                 // hypotheses per scoring batch when threads > 1
  std::uint64_t seed = 1;

  void validate() const;
};

struct RegistrationResult {
  RigidTransform transform;
  std::size_t inliers = 0;
  int iterations = 0;  // hypotheses evaluated
  bool converged = false;
  std::vector<std::uint8_t> inlier_mask;
};

/// Estimates T mapping cloud A onto cloud B from matches (a indexes A, b
/// indexes B). Minimal samples of three non-degenerate matches; adaptive stop
/// once 1 − (1 − w³)^n reaches the confidence; final refit on the inliers,
/// optionally weighted per match. Best model ties go to the earlier
/// hypothesis, so every thread count gives the same result.
RegistrationResult ransac_register(const MatchSet& matches, const PointCloud& A, const PointCloud& B,
                                   const RansacConfig& cfg, const std::vector<double>& refit_weights = {});

/// Hypotheses needed so that an all-inlier sample was drawn with probability
/// `confidence` given inlier ratio w.
double required_iterations(double inlier_ratio, double confidence);

struct PoseError {
  double rte = 0.0;  // meters
  double rre = 0.0;  // degrees
};

/// Translation norm and rotation angle of T_truth⁻¹ · T_estimate.
PoseError rte_rre(const RigidTransform& estimate, const RigidTransform& truth);

/// Strict thresholds: success iff rte < max_rte and rre < max_rre.
bool registration_success(double rte, double rre, double max_rte = 2.0, double max_rre = 5.0);

}  // namespace pcdesc::reg
