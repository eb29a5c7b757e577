#include "pcdesc/trainer.hpp"

#include "pcdesc/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pcdesc::train {

using nn::Mat;

void LocalConfig::validate() const {
  auto check = [](bool ok, const char* what) { require(ok, ErrorCode::Configuration, what); };
  check(steps >= 0, "train.steps must be >= 0");
  check(steps_per_epoch >= 1, "train.steps_per_epoch must be >= 1");
  check(pairs >= 1, "train.pairs must be >= 1");
  check(anchors >= 2, "train.anchors must be >= 2");
  check(max_yaw >= 0.0 && max_yaw <= 180.0, "train.max_yaw must lie in [0, 180]");
  check(sigma >= 0.0, "train.sigma must be >= 0");
  check(tau > 0.0, "train.tau must be > 0");
  check(input_points >= 0, "train.input_points must be >= 0");
  check(input_points == 0 || input_points >= anchors, "train.input_points must be >= train.anchors");
  check(lr > 0.0 && lr_every >= 1, "train.lr and train.lr_every must be positive");
  check(checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
}

void GlobalConfig::validate() const {
  auto check = [](bool ok, const char* what) { require(ok, ErrorCode::Configuration, what); };
  check(steps >= 0, "global.steps must be >= 0");
  check(steps_per_epoch >= 1, "global.steps_per_epoch must be >= 1");
  check(positives >= 1 && negatives >= 1, "global.positives and global.negatives must be >= 1");
  check(pos_radius > 0.0 && neg_radius > pos_radius, "global radii must satisfy 0 < pos_radius < neg_radius");
  check(max_yaw >= 0.0 && max_yaw <= 180.0, "global.max_yaw must lie in [0, 180]");
  check(sigma >= 0.0, "global.sigma must be >= 0");
  check(input_points >= 0, "global.input_points must be >= 0");
  check(lr > 0.0 && lr_decay > 0.0 && lr_decay <= 1.0 && lr_every >= 1 && lr_floor > 0.0,
        "global learning-rate settings out of range");
  check(checkpoint_every >= 0, "global.checkpoint_every must be >= 0");
}

namespace {

template <class T>
void scale_all(nn::ModelParams<T>& g, T s) {
  nn::for_each_param(g, [s](const std::string&, Mat<T>& m) { m *= s; });
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

PointCloud maybe_subsample(const PointCloud& cloud, int n, std::uint64_t seed) {
  if (n <= 0 || static_cast<std::size_t>(n) >= cloud.size()) return cloud;
  return random_sample(cloud, static_cast<std::size_t>(n), seed).cloud;
}

/// Index of the cloud used at position `slot` of the global sample stream:
/// every pass over the dataset is a fresh seeded permutation.
std::size_t stream_index(std::size_t slot, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0xc7c1e, slot / n));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm[slot % n];
}

template <class T>
Mat<T> rows_of(const Mat<T>& x, const std::vector<std::size_t>& rows) {
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

template <class T>
void scatter_rows(const Mat<T>& src, const std::vector<std::size_t>& rows, Mat<T>& dst) {
  for (std::size_t i = 0; i < rows.size(); ++i) dst.row(static_cast<Eigen::Index>(rows[i])) += src.row(static_cast<Eigen::Index>(i));
}

template <class T>
struct LocalView {
  nn::EncoderGeometry geom;
  nn::EncoderCache<T> enc_cache;
  nn::EncoderOutput<T> enc;
  nn::MlpCache<T> det_cache;
  Mat<T> saliency;
};

template <class T>
LocalView<T> local_forward(const nn::ModelParams<T>& m, const PointCloud& cloud) {
  LocalView<T> v;
  v.geom = nn::build_encoder_geometry(center_cloud(cloud).cloud, m.arch);
  v.enc = nn::encoder_forward<T>(v.geom, m.encoder, &v.enc_cache);
  v.saliency = nn::detector_forward<T>(v.enc.psi, m.detector, &v.det_cache);
  return v;
}

template <class T>
void local_backward(const nn::ModelParams<T>& m, const LocalView<T>& v, const std::vector<std::size_t>& anchors,
                    const Mat<T>& dx_anchor, const Mat<T>& ds_anchor, bool det_to_encoder, nn::ModelParams<T>& grad) {
  const Eigen::Index n = v.enc.x.rows();
  Mat<T> dx = Mat<T>::Zero(n, v.enc.x.cols());
  scatter_rows(dx_anchor, anchors, dx);
  Mat<T> ds = Mat<T>::Zero(n, 1);
  scatter_rows(ds_anchor, anchors, ds);
  const Mat<T> dpsi = nn::detector_backward<T>(m.detector, v.det_cache, ds, grad.detector);
  nn::encoder_backward<T>(v.geom, m.encoder, v.enc_cache, v.enc, det_to_encoder ? dpsi : Mat<T>(), dx, grad.encoder);
}

}  // namespace

template <class T>
std::vector<StepRecord> train_local(nn::ModelParams<T>& model, const std::vector<PointCloud>& dataset,
                                    const LocalConfig& cfg, const loss::LossConfig& loss_cfg,
                                    const Checkpoint<T>& checkpoint) {
  cfg.validate();
  loss_cfg.validate();
  require(!dataset.empty(), ErrorCode::Configuration, "train_local: empty dataset");
  for (const auto& c : dataset)
    require(c.size() >= static_cast<std::size_t>(cfg.anchors), ErrorCode::Configuration,
            "train_local: every cloud needs at least train.anchors points");

  optim::AdamState<T> adam_enc, adam_det;
  auto is_encoder = [](const std::string& name) { return starts_with(name, "encoder."); };
  auto is_detector = [](const std::string& name) { return starts_with(name, "detector."); };
  std::vector<StepRecord> history;
  history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    StepRecord rec;
    rec.step = step + 1;
    rec.epoch = step / cfg.steps_per_epoch;
    rec.lr = optim::lr_schedule_local(rec.epoch, cfg.lr, cfg.lr_every);

    nn::ModelParams<T> grad = nn::zeros_like(model);
    double desc_sum = 0.0, det_sum = 0.0, asr_sum = 0.0;
    int used = 0;
    for (int pair = 0; pair < cfg.pairs; ++pair) {
      const std::uint64_t ps = derive_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1, static_cast<std::uint64_t>(pair));
      const std::size_t ci = stream_index(static_cast<std::size_t>(step) * cfg.pairs + pair, dataset.size(), cfg.seed);
      const PointCloud P = maybe_subsample(dataset[ci], cfg.input_points, derive_seed(ps, 1));
      const SyntheticPair sp = synth_pair(P, cfg.max_yaw, cfg.sigma, derive_seed(ps, 2));

      // Same point order on both sides: anchor i of P pairs with anchor i of P'.
      std::vector<std::size_t> anchors = random_sample(P, static_cast<std::size_t>(cfg.anchors), derive_seed(ps, 3)).indices;
      std::sort(anchors.begin(), anchors.end());
      std::vector<Point3> pa, pb;
      for (auto i : anchors) {
        pa.push_back(P[i]);
        pb.push_back(sp.transform.apply(P[i]));
      }
      const CorrespondenceMatrix M = gt_correspondences(PointCloud(pa), PointCloud(pb), sp.transform.inverse(), cfg.tau);

      const LocalView<T> v1 = local_forward(model, P);
      const LocalView<T> v2 = local_forward(model, sp.cloud);
      const Mat<T> xa = rows_of(v1.enc.x, anchors), xb = rows_of(v2.enc.x, anchors);
      const Mat<T> D = loss::feature_distance(xa, xb);
      Mat<T> dD;
      T desc;
      try {
        desc = loss::desc_loss(D, M, loss_cfg, &dD);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateBatch) throw;
        spdlog::warn("train_local: step {} pair {} skipped: {}", step + 1, pair, e.what());
        ++rec.skipped;
        continue;
      }
      const auto asr_a = loss::avg_success_rate_rows(D, M, loss_cfg.asr_k);
      const auto asr_b = loss::avg_success_rate_cols(D, M, loss_cfg.asr_k);
      Mat<T> dsa, dsb;
      const T det_a = loss::det_loss(rows_of(v1.saliency, anchors), std::span<const double>(asr_a), loss_cfg, &dsa);
      const T det_b = loss::det_loss(rows_of(v2.saliency, anchors), std::span<const double>(asr_b), loss_cfg, &dsb);
      const T det = (det_a + det_b) / T(2);
      const T w = static_cast<T>(loss_cfg.lambda) / T(2);
      dsa *= w;
      dsb *= w;

      Mat<T> dxa, dxb;
      loss::feature_distance_backward(xa, xb, D, dD, dxa, dxb);
      local_backward(model, v1, anchors, dxa, dsa, cfg.detector_to_encoder, grad);
      local_backward(model, v2, anchors, dxb, dsb, cfg.detector_to_encoder, grad);
      desc_sum += static_cast<double>(desc);
      for (std::size_t i = 0; i < asr_a.size(); ++i) asr_sum += (asr_a[i] + asr_b[i]) / (2.0 * static_cast<double>(asr_a.size()));
      det_sum += static_cast<double>(det);
      ++used;
    }

    if (used > 0) {
      rec.desc = desc_sum / used;
      rec.det = det_sum / used;
      rec.asr = asr_sum / used;
      rec.loss = loss::combined_local_loss(rec.desc, rec.det, loss_cfg.lambda);
      if (!std::isfinite(rec.loss))
        fail(ErrorCode::NumericError, "train_local: non-finite loss at step " + std::to_string(step + 1));
      scale_all(grad, static_cast<T>(1.0 / used));
      optim::adam_step(model, grad, adam_enc, rec.lr, is_encoder);
      optim::adam_step(model, grad, adam_det, rec.lr * cfg.detector_lr_scale, is_detector);
    } else {
      spdlog::warn("train_local: step {} had no usable pair", step + 1);
      rec.loss = rec.desc = rec.det = std::nan("");
    }
    history.push_back(rec);
    if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1, model);
  }
  return history;
}

namespace {

double planar_distance(const PlaceSample& a, const PlaceSample& b) { return (a.position - b.position).norm(); }

struct PlaceSets {
  std::vector<std::size_t> near, far, negstar;  // negstar: usable neg* candidates
};

PlaceSets place_sets(const std::vector<PlaceSample>& places, std::size_t a, const GlobalConfig& cfg) {
  PlaceSets s;
  for (std::size_t j = 0; j < places.size(); ++j) {
    const double d = planar_distance(places[a], places[j]);
    if (d <= cfg.pos_radius) s.near.push_back(j);
    if (d > cfg.neg_radius) s.far.push_back(j);
  }
  for (auto c : s.far) {
    bool clear = std::all_of(s.near.begin(), s.near.end(),
                             [&](std::size_t p) { return planar_distance(places[p], places[c]) > cfg.neg_radius; });
    if (!clear) continue;
    std::size_t pool = 0;
    for (auto f : s.far)
      if (f != c && planar_distance(places[f], places[c]) > cfg.neg_radius) ++pool;
    if (pool >= static_cast<std::size_t>(cfg.negatives)) s.negstar.push_back(c);
  }
  return s;
}

}  // namespace

std::vector<std::size_t> valid_anchors(const std::vector<PlaceSample>& places, const GlobalConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < places.size(); ++a)
    if (!place_sets(places, a, cfg).negstar.empty()) out.push_back(a);
  return out;
}

Quadruplet sample_quadruplet(const std::vector<PlaceSample>& places, const std::vector<std::size_t>& anchors,
                             const GlobalConfig& cfg, std::uint64_t seed) {
  require(!anchors.empty(), ErrorCode::Configuration, "no valid quadruplet in the place set");
  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  Quadruplet q;
  q.anchor = anchors[pick(anchors.size())];
  const PlaceSets s = place_sets(places, q.anchor, cfg);
  for (int i = 0; i < cfg.positives; ++i) q.positives.push_back(s.near[pick(s.near.size())]);
  q.negstar = s.negstar[pick(s.negstar.size())];
  std::vector<std::size_t> pool;
  for (auto f : s.far)
    if (f != q.negstar && planar_distance(places[f], places[q.negstar]) > cfg.neg_radius) pool.push_back(f);
  for (int i = 0; i < cfg.negatives; ++i) {
    const std::size_t j = i + pick(pool.size() - i);
    std::swap(pool[i], pool[j]);
    q.negatives.push_back(pool[i]);
  }
  return q;
}

namespace {

template <class T>
struct GlobalView {
  nn::HeadGeometry geom;
  Eigen::Index rows = 0;
  nn::HeadCache<T> cache;
  Mat<T> desc;
};

template <class T>
GlobalView<T> global_forward(const nn::ModelParams<T>& m, const PointCloud& cloud) {
  GlobalView<T> v;
  const PointCloud centered = center_cloud(cloud).cloud;
  const auto eg = nn::build_encoder_geometry(centered, m.arch);
  const auto enc = nn::encoder_forward<T>(eg, m.encoder, nullptr);
  v.geom = nn::build_head_geometry(centered, m.arch);
  v.rows = enc.x.rows();
  v.desc = nn::head_forward<T>(v.geom, enc.x, m.head, &v.cache, nullptr);
  return v;
}

}  // namespace

template <class T>
std::vector<StepRecord> train_global(nn::ModelParams<T>& model, const std::vector<PlaceSample>& places,
                                     const GlobalConfig& cfg, const loss::LossConfig& loss_cfg,
                                     const Checkpoint<T>& checkpoint) {
  cfg.validate();
  loss_cfg.validate();
  const std::vector<std::size_t> anchors = valid_anchors(places, cfg);
  require(!anchors.empty(), ErrorCode::Configuration,
          "train_global: no valid quadruplet (need positives within pos_radius and enough places beyond neg_radius)");
  const std::uint64_t encoder_hash = nn::parameter_hash(model, "encoder.");

  optim::AdamState<T> adam;
  auto trainable = [](const std::string& name) { return starts_with(name, "head."); };
  std::vector<StepRecord> history;
  history.reserve(static_cast<std::size_t>(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    StepRecord rec;
    rec.step = step + 1;
    rec.epoch = step / cfg.steps_per_epoch;
    rec.lr = optim::lr_schedule_global(rec.epoch, cfg.lr, cfg.lr_decay, cfg.lr_every, cfg.lr_floor);
    const std::uint64_t ss = derive_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1, 0x9b);
    const Quadruplet q = sample_quadruplet(places, anchors, cfg, derive_seed(ss, 0));

    std::vector<std::size_t> members{q.anchor};
    members.insert(members.end(), q.positives.begin(), q.positives.end());
    members.insert(members.end(), q.negatives.begin(), q.negatives.end());
    members.push_back(q.negstar);

    std::vector<GlobalView<T>> views;
    views.reserve(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      const std::uint64_t s = derive_seed(ss, i + 1);
      const PointCloud base = maybe_subsample(places[members[i]].cloud, cfg.input_points, derive_seed(s, 1));
      views.push_back(global_forward(model, synth_pair(base, cfg.max_yaw, cfg.sigma, derive_seed(s, 2)).cloud));
    }
    const std::size_t np = q.positives.size(), nn_ = q.negatives.size();
    std::vector<Mat<T>> pos, neg;
    for (std::size_t i = 0; i < np; ++i) pos.push_back(views[1 + i].desc);
    for (std::size_t i = 0; i < nn_; ++i) neg.push_back(views[1 + np + i].desc);

    loss::QuadrupletGrads<T> qg;
    const T l = loss::lazy_quadruplet_loss(views[0].desc, pos, neg, views.back().desc, loss_cfg, &qg);
    rec.loss = static_cast<double>(l);
    if (!std::isfinite(rec.loss))
      fail(ErrorCode::NumericError, "train_global: non-finite loss at step " + std::to_string(step + 1));

    nn::ModelParams<T> grad = nn::zeros_like(model);
    auto back = [&](const GlobalView<T>& v, const Mat<T>& d) {
      if (d.size() == 0 || d.isZero(0)) return;
      nn::head_backward<T>(v.geom, v.rows, model.head, v.cache, d, grad.head);
    };
    back(views[0], qg.anchor);
    for (std::size_t i = 0; i < np; ++i) back(views[1 + i], qg.positives[i]);
    for (std::size_t i = 0; i < nn_; ++i) back(views[1 + np + i], qg.negatives[i]);
    back(views.back(), qg.negstar);
    optim::adam_step(model, grad, adam, rec.lr, trainable);

    history.push_back(rec);
    if (checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1, model);
  }
  if (nn::parameter_hash(model, "encoder.") != encoder_hash)
    fail(ErrorCode::NumericError, "train_global: encoder parameters changed during phase 2");
  return history;
}

template std::vector<StepRecord> train_local<float>(nn::ModelParams<float>&, const std::vector<PointCloud>&,
                                                    const LocalConfig&, const loss::LossConfig&,
                                                    const Checkpoint<float>&);
template std::vector<StepRecord> train_local<double>(nn::ModelParams<double>&, const std::vector<PointCloud>&,
                                                     const LocalConfig&, const loss::LossConfig&,
                                                     const Checkpoint<double>&);
template std::vector<StepRecord> train_global<float>(nn::ModelParams<float>&, const std::vector<PlaceSample>&,
                                                     const GlobalConfig&, const loss::LossConfig&,
                                                     const Checkpoint<float>&);
template std::vector<StepRecord> train_global<double>(nn::ModelParams<double>&, const std::vector<PlaceSample>&,
                                                      const GlobalConfig&, const loss::LossConfig&,
                                                      const Checkpoint<double>&);

}  // namespace pcdesc::train
