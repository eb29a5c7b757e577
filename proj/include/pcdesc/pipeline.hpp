#pragma once

#include "pcdesc/config.hpp"
#include "pcdesc/keypoints.hpp"
#include "pcdesc/model.hpp"
#include "pcdesc/registration.hpp"
#include "pcdesc/retrieval.hpp"

#include <optional>
#include <vector>

namespace pcdesc::pipeline {

/// Single forward pass plus keypoint selection.
struct Features {
  nn::Extraction<float> ex;
  kp::KeypointSet keypoints;
};

/// Throws invalid-argument when the cloud has fewer than eval.min_points points.
Features compute_features(const nn::ModelParams<float>& m, const PointCloud& cloud, const EvalConfig& eval);

/// Keypoint descriptors (rows of X) in keypoint order.
nn::Mat<float> keypoint_descriptors(const Features& f);

struct PairOutcome {
  reg::RegistrationResult result;
  std::size_t matches = 0;
  std::optional<reg::PoseError> error;  // present when a ground truth was given
  std::optional<bool> success;
  std::optional<double> repeatability;
};

/// Keypoints → descriptors → matching → RANSAC. Estimates T mapping A onto B.
/// Throws insufficient-matches when fewer than three matches survive.
PairOutcome register_pair(const Features& a, const PointCloud& A, const Features& b, const PointCloud& B,
                          const EvalConfig& eval, std::uint64_t ransac_seed,
                          const std::optional<RigidTransform>& truth = std::nullopt);

/// One sweep point: fixed yaw (or uniform in ±eval.max_yaw when unset),
/// Gaussian noise σ, and downsampling that keeps round(N / α) points.
struct Perturbation {
  std::optional<double> yaw_deg;
  double sigma = 0.02;
  double downsample = 1.0;
};

struct PerturbedCloud {
  PointCloud cloud;
  RigidTransform truth;  // maps the source cloud into the perturbed frame
};

PerturbedCloud perturb(const PointCloud& cloud, const Perturbation& p, double max_yaw, std::uint64_t seed);

struct RepeatabilityRow {
  double mean = 0.0;
  std::size_t pairs = 0;
};

struct RegistrationRow {
  std::size_t pairs = 0, successes = 0, failures_no_match = 0;
  double success_rate = 0.0;   // percent
  double mean_rte = 0.0;       // over successful pairs
  double mean_rre = 0.0;
  double mean_iterations = 0.0;
  double mean_repeatability = 0.0;
};

struct RetrievalRow {
  std::size_t queries = 0, database = 0;
  double recall_at_1 = 0.0;
  double recall_at_1pct = 0.0;
  std::vector<double> curve;
};

RepeatabilityRow evaluate_repeatability(const nn::ModelParams<float>& m, const std::vector<PointCloud>& clouds,
                                        const Perturbation& p, const EvalConfig& eval);
RegistrationRow evaluate_registration(const nn::ModelParams<float>& m, const std::vector<PointCloud>& clouds,
                                      const Perturbation& p, const EvalConfig& eval);

struct Place {
  std::string id;
  PointCloud cloud;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Database from the clean clouds, one perturbed query per place.
RetrievalRow evaluate_retrieval(const nn::ModelParams<float>& m, const std::vector<Place>& places,
                                const Perturbation& p, const EvalConfig& eval);

retrieval::DescriptorDatabase build_database(const nn::ModelParams<float>& m, const std::vector<Place>& places,
                                             const EvalConfig& eval);

}  // namespace pcdesc::pipeline
