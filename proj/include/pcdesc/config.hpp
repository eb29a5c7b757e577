#pragma once

#include "pcdesc/losses.hpp"
#include "pcdesc/model.hpp"
#include "pcdesc/registration.hpp"
#include "pcdesc/trainer.hpp"

#include <filesystem>
#include <string>

namespace pcdesc {

struct EvalConfig {
  int keypoints = 256;
  double nms_radius = 0.5;
  double repeat_radius = 0.5;
  reg::MatchMode match_mode = reg::MatchMode::Mutual;
  double inlier_threshold = 0.5;
  int max_iterations = 10000;
  double confidence = 0.99;
  int ransac_threads = 1;
  bool saliency_refit = false;  // weight the final refit by keypoint saliency
  double max_rte = 2.0;
  double max_rre = 5.0;
  double positive_radius = 25.0;
  int recall_max_n = 25;
  int min_points = 64;
  double max_yaw = 90.0;  // perturbation of evaluation pairs and queries
  double sigma = 0.02;
  std::uint64_t seed = 1;

  void validate() const;
  reg::RansacConfig ransac(std::uint64_t seed) const;
};

/// Every tunable of the pipeline, grouped as in the config file sections
/// [arch], [loss], [train], [global], [eval].
struct PipelineConfig {
  nn::ArchConfig arch;
  loss::LossConfig loss;
  train::LocalConfig train;
  train::GlobalConfig global;
  EvalConfig eval;

  void validate() const;
};

/// `key = value` lines under `[section]` headers; `#` starts a comment.
/// Malformed lines and unparsable values throw parse errors with the line
/// number; unknown sections or keys throw configuration errors. Keys that do
/// not appear keep the values already in `base`.
PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Full config text; parse_config(format_config(c)) reproduces c.
std::string format_config(const PipelineConfig& c);
/// Only the [arch] section.
std::string format_arch(const nn::ArchConfig& a);

}  // namespace pcdesc
