#include "support.hpp"

#include "pcdesc/optim.hpp"
#include "pcdesc/scene.hpp"
#include "pcdesc/trainer.hpp"

#include <doctest.h>

#include <set>

using namespace pcdesc;
using namespace pcdesc::testing;
using nn::Mat;

namespace {

struct Scalar {
  Mat<double> w;
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(nn::join_name(prefix, "w"), w);
  }
};

nn::ArchConfig toy_arch() {
  nn::ArchConfig a;
  a.conv_width = 8;
  a.flex1_width = 16;
  a.descriptor_dim = 16;
  a.k1 = 6;
  a.k2 = 6;
  a.det_w1 = 16;
  a.det_w2 = 8;
  a.det_w3 = 8;
  a.proj1_width = 16;
  a.proj2_width = 32;
  a.proj_k = 6;
  a.att_w1 = 16;
  a.att_w2 = 8;
  a.clusters = 8;
  a.global_dim = 16;
  return a;
}

/// Mean lazy quadruplet loss of clean global descriptors over 40 fixed quadruplets.
double fixed_quadruplet_loss(const nn::ModelParams<float>& m, const std::vector<PlaceSample>& places,
                             const train::GlobalConfig& cfg) {
  const auto anchors = train::valid_anchors(places, cfg);
  std::vector<Mat<float>> g;
  for (const auto& p : places) g.push_back(nn::extract(m, p.cloud).global);
  double s = 0.0;
  for (int i = 0; i < 40; ++i) {
    const auto q = train::sample_quadruplet(places, anchors, cfg, 1000 + i);
    std::vector<Mat<float>> pos, neg;
    for (auto p : q.positives) pos.push_back(g[p]);
    for (auto n : q.negatives) neg.push_back(g[n]);
    s += loss::lazy_quadruplet_loss<float>(g[q.anchor], pos, neg, g[q.negstar], loss::LossConfig{});
  }
  return s / 40.0;
}

double mean_loss(const std::vector<train::StepRecord>& h, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += h[i].loss;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("adam defaults") {
  const optim::AdamConfig c;
  CHECK(c.lr == 1e-4);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
}

TEST_CASE("adam step") {
  SUBCASE("zero gradient leaves parameters and advances the counter") {
    Scalar p{Mat<double>::Constant(1, 1, 0.7)}, g{Mat<double>::Zero(1, 1)};
    optim::AdamState<double> st;
    optim::adam_step(p, g, st, 1e-3);
    CHECK(p.w(0, 0) == 0.7);
    CHECK(st.step == 1);
  }
  SUBCASE("three constant-gradient steps vs hand recursion") {
    Scalar p{Mat<double>::Constant(1, 1, 1.0)}, g{Mat<double>::Constant(1, 1, 0.3)};
    optim::AdamState<double> st;
    double w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
      optim::adam_step(p, g, st, 1e-2);
      m = 0.9 * m + 0.1 * 0.3;
      v = 0.999 * v + 0.001 * 0.09;
      const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
      w -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.w(0, 0) == doctest::Approx(w).epsilon(1e-14));
    }
    // bias correction makes every step with a constant gradient ≈ lr
    CHECK(1.0 - p.w(0, 0) == doctest::Approx(3e-2).epsilon(1e-6));
  }
  SUBCASE("non-finite gradient names the parameter and changes nothing") {
    Scalar p{Mat<double>::Constant(1, 1, 1.0)}, g{Mat<double>::Constant(1, 1, std::nan(""))};
    optim::AdamState<double> st;
    try {
      optim::adam_step(p, g, st, 1e-2);
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NumericError);
      CHECK(std::string(e.what()).find("w") != std::string::npos);
    }
    CHECK(p.w(0, 0) == 1.0);
    CHECK(st.step == 0);
  }
}

TEST_CASE("learning-rate schedules") {
  CHECK(optim::lr_schedule_local(0) == 1e-4);
  CHECK(optim::lr_schedule_local(4) == 1e-4);
  CHECK(optim::lr_schedule_local(5) == 5e-5);
  CHECK(optim::lr_schedule_local(12) == 2.5e-5);
  CHECK(optim::lr_schedule_global(0) == 5e-4);
  CHECK(optim::lr_schedule_global(10) == 2.5e-4);
  CHECK(optim::lr_schedule_global(1000) == 1e-5);
  for (int e = 0; e < 200; ++e) {
    CHECK(optim::lr_schedule_local(e) == 1e-4 * std::pow(0.5, e / 5));
    CHECK(optim::lr_schedule_global(e) == std::max(5e-4 * std::pow(0.5, e / 10), 1e-5));
  }
}

TEST_CASE("trainer config defaults and validation") {
  const train::LocalConfig l;
  CHECK(l.pairs == 6);
  CHECK(l.anchors == 512);
  CHECK(l.lr == 1e-4);
  CHECK(l.lr_every == 5);
  CHECK(l.sigma == 0.02);
  CHECK(l.tau == 0.5);
  const train::GlobalConfig g;
  CHECK(g.positives == 2);
  CHECK(g.negatives == 8);
  CHECK(g.pos_radius == 10.0);
  CHECK(g.neg_radius == 50.0);
  CHECK(g.lr == 5e-4);
  CHECK(g.lr_floor == 1e-5);
  train::LocalConfig bad;
  bad.pairs = 0;
  CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::Configuration);
  train::GlobalConfig badg;
  badg.neg_radius = 5.0;
  CHECK(error_code_of([&] { badg.validate(); }) == ErrorCode::Configuration);
}

TEST_CASE("phase 1 training") {
  const std::vector<PointCloud> data{make_synthetic_scene(512, 21)};
  train::LocalConfig cfg;
  cfg.steps = 50;
  cfg.pairs = 2;
  cfg.anchors = 128;
  cfg.lr = 1e-3;
  cfg.steps_per_epoch = 10;
  cfg.lr_every = 2;
  auto model = nn::init_model<float>(toy_arch(), 4);
  const auto head_hash = nn::parameter_hash(model, "head.");
  const auto enc_hash = nn::parameter_hash(model, "encoder.");
  int checkpoints = 0;
  cfg.checkpoint_every = 20;
  const auto h = train::train_local(model, data, cfg, loss::LossConfig{},
                                    train::Checkpoint<float>([&](int step, const nn::ModelParams<float>&) { checkpoints += step % 20 == 0; }));
  REQUIRE(h.size() == 50);
  CHECK(checkpoints == 2);
  for (const auto& r : h) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.lr == optim::lr_schedule_local(r.epoch, 1e-3, 2));
    CHECK(r.epoch == (r.step - 1) / 10);
  }
  CHECK(h.back().loss < h.front().loss);
  CHECK(mean_loss(h, 40, 50) < mean_loss(h, 0, 10));
  CHECK(nn::parameter_hash(model, "head.") == head_hash);
  CHECK(nn::parameter_hash(model, "encoder.") != enc_hash);

  SUBCASE("bit-identical across runs") {
    auto m2 = nn::init_model<float>(toy_arch(), 4);
    cfg.checkpoint_every = 0;
    cfg.steps = 10;
    const auto h2 = train::train_local(m2, data, cfg, loss::LossConfig{});
    for (std::size_t i = 0; i < h2.size(); ++i) CHECK(h2[i].loss == h[i].loss);
  }
  SUBCASE("double precision runs too") {
    auto md = nn::init_model<double>(toy_arch(), 4);
    cfg.steps = 2;
    const auto hd = train::train_local(md, data, cfg, loss::LossConfig{});
    CHECK(hd.size() == 2);
  }
  SUBCASE("clouds smaller than the anchor count are rejected") {
    cfg.anchors = 600;
    CHECK(error_code_of([&] { train::train_local(model, data, cfg, loss::LossConfig{}); }) == ErrorCode::Configuration);
  }
}

TEST_CASE("quadruplet sampling") {
  const auto places = make_synthetic_places(12, 64, 5);
  const train::GlobalConfig cfg;
  const auto anchors = train::valid_anchors(places, cfg);
  CHECK(anchors.size() == 12);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto q = train::sample_quadruplet(places, anchors, cfg, s);
    CHECK(q.positives.size() == 2);
    CHECK(q.negatives.size() == 8);
    std::set<std::size_t> negs(q.negatives.begin(), q.negatives.end());
    CHECK(negs.size() == 8);
    const auto& a = places[q.anchor].position;
    for (auto p : q.positives) CHECK((places[p].position - a).norm() <= 10.0);
    for (auto n : q.negatives) {
      CHECK((places[n].position - a).norm() > 50.0);
      CHECK((places[n].position - places[q.negstar].position).norm() > 50.0);
    }
    CHECK((places[q.negstar].position - a).norm() > 50.0);
    for (auto p : q.positives) CHECK((places[p].position - places[q.negstar].position).norm() > 50.0);
  }
  SUBCASE("too few places for eight negatives") {
    const auto few = make_synthetic_places(6, 64, 5);
    CHECK(train::valid_anchors(few, cfg).empty());
    auto model = nn::init_model<float>(toy_arch(), 1);
    CHECK(error_code_of([&] { train::train_global(model, few, cfg, loss::LossConfig{}); }) == ErrorCode::Configuration);
  }
}

TEST_CASE("phase 2 training keeps the encoder frozen") {
  const auto places = make_synthetic_places(12, 256, 8);
  auto model = nn::init_model<float>(toy_arch(), 6);
  const auto enc = nn::parameter_hash(model, "encoder.");
  const auto det = nn::parameter_hash(model, "detector.");
  const auto head = nn::parameter_hash(model, "head.");
  train::GlobalConfig cfg;
  cfg.steps = 100;
  cfg.lr = 5e-4;
  cfg.steps_per_epoch = 10;
  // A random encoder is not yaw invariant, so the head only sees small rotations here.
  cfg.max_yaw = 10.0;
  const double before = fixed_quadruplet_loss(model, places, cfg);
  const auto h = train::train_global(model, places, cfg, loss::LossConfig{});
  REQUIRE(h.size() == 100);
  CHECK(nn::parameter_hash(model, "encoder.") == enc);
  CHECK(nn::parameter_hash(model, "detector.") == det);
  CHECK(nn::parameter_hash(model, "head.") != head);
  for (const auto& r : h) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.lr == optim::lr_schedule_global(r.epoch, 5e-4, 0.5, 10, 1e-5));
  }
  CHECK(fixed_quadruplet_loss(model, places, cfg) < 0.5 * before);

  SUBCASE("bit-identical across runs") {
    auto m2 = nn::init_model<float>(toy_arch(), 6);
    cfg.steps = 5;
    const auto h2 = train::train_global(m2, places, cfg, loss::LossConfig{});
    for (std::size_t i = 0; i < h2.size(); ++i) CHECK(h2[i].loss == h[i].loss);
  }
}
