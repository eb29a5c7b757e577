#pragma once

#include "pcdesc/losses.hpp"
#include "pcdesc/model.hpp"
#include "pcdesc/optim.hpp"
#include "pcdesc/scene.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace pcdesc::train {

/// Phase 1: encoder + detector on synthetic pairs.
struct LocalConfig {
  int steps = 200;
  int steps_per_epoch = 100;
  int pairs = 6;          // clouds per batch
  int anchors = 512;      // sampled points per pair
  double max_yaw = 90.0;  // degrees
  double sigma = 0.02;    // meters
  double tau = 0.5;       // correspondence radius
  int input_points = 0;   // random subsample per pair, 0 keeps the cloud
  double lr = 1e-4;
  int lr_every = 5;       // epochs per halving
  double detector_lr_scale = 1.0;  // detector.* learning rate relative to lr
  bool detector_to_encoder = true; // let the detector loss reach the encoder
  int checkpoint_every = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Phase 2: attention + NetVLAD + FC on places; the encoder stays frozen.
struct GlobalConfig {
  int steps = 100;
  int steps_per_epoch = 100;
  int positives = 2;
  int negatives = 8;
  double pos_radius = 10.0;
  double neg_radius = 50.0;
  double max_yaw = 90.0;
  double sigma = 0.02;
  int input_points = 0;
  double lr = 5e-4;
  double lr_decay = 0.5;
  int lr_every = 10;
  double lr_floor = 1e-5;
  int checkpoint_every = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double desc = 0.0;  // phase 1 only
  double det = 0.0;   // phase 1 only
  double asr = 0.0;   // phase 1 only, mean success rate of the anchors
  int skipped = 0;    // degenerate pairs dropped from the batch
};

template <class T>
using Checkpoint = std::function<void(int step, const nn::ModelParams<T>&)>;

template <class T>
struct LocalResult {
  nn::ModelParams<T> model;
  std::vector<StepRecord> history;
};

/// Updates encoder.* and detector.* of `model` in place. Degenerate pairs
/// are skipped with a warning; a batch where every pair is degenerate is
/// skipped entirely. Throws numeric-error on a non-finite loss.
template <class T>
std::vector<StepRecord> train_local(nn::ModelParams<T>& model, const std::vector<PointCloud>& dataset,
                                    const LocalConfig& cfg, const loss::LossConfig& loss_cfg,
                                    const Checkpoint<T>& checkpoint = {});

/// One quadruplet sample drawn from the place list.
struct Quadruplet {
  std::size_t anchor;
  std::vector<std::size_t> positives, negatives;
  std::size_t negstar;
};

/// Indices of every place that can anchor a quadruplet under cfg.
std::vector<std::size_t> valid_anchors(const std::vector<PlaceSample>& places, const GlobalConfig& cfg);

/// Samples a batch around a valid anchor. Positives are drawn with
/// replacement from the places within pos_radius (the anchor included);
/// negatives without replacement beyond neg_radius; neg* lies beyond
/// neg_radius of the anchor, the positives and every negative.
Quadruplet sample_quadruplet(const std::vector<PlaceSample>& places, const std::vector<std::size_t>& anchors,
                             const GlobalConfig& cfg, std::uint64_t seed);

/// Updates head.* only. Throws configuration error when no quadruplet can
/// be formed; verifies the encoder hash is unchanged on exit.
template <class T>
std::vector<StepRecord> train_global(nn::ModelParams<T>& model, const std::vector<PlaceSample>& places,
                                     const GlobalConfig& cfg, const loss::LossConfig& loss_cfg,
                                     const Checkpoint<T>& checkpoint = {});

}  // namespace pcdesc::train
