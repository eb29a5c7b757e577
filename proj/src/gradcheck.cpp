#include "pcdesc/gradcheck.hpp"

#include "pcdesc/losses.hpp"
#include "pcdesc/model.hpp"
#include "pcdesc/scene.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace pcdesc::gradcheck {

using nn::Mat;
using M = Mat<double>;

namespace {

class Checker {
 public:
  Checker(const Options& opt, std::vector<BlockReport>& out) : opt_(opt), out_(out) {}

  /// Compares `analytic` with central differences of `loss` over every entry of `x`.
  void check(const std::string& block, const std::string& parameter, M& x, const M& analytic,
             const std::function<double()>& loss) {
    BlockReport r{block, parameter, static_cast<std::size_t>(x.size()), 0.0, false};
    double max_diff = 0.0, scale = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + opt_.h;
      const double lp = loss();
      x.data()[i] = orig - opt_.h;
      const double lm = loss();
      x.data()[i] = orig;
      const double numeric = (lp - lm) / (2.0 * opt_.h);
      const double a = analytic.data()[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
    r.max_rel_error = max_diff / scale;
    r.passed = r.max_rel_error < opt_.tolerance && analytic.size() == x.size() && std::isfinite(r.max_rel_error);
    out_.push_back(r);
  }

  /// Checks every named matrix of a parameter struct against its gradient struct.
  template <class P>
  void check_params(const std::string& block, P& params, P& grads, const std::function<double()>& loss) {
    std::vector<std::pair<std::string, M*>> p, g;
    nn::for_each_param(params, [&](const std::string& n, M& m) { p.emplace_back(n, &m); });
    nn::for_each_param(grads, [&](const std::string& n, M& m) { g.emplace_back(n, &m); });
    for (std::size_t i = 0; i < p.size(); ++i) check(block, p[i].first, *p[i].second, *g[i].second, loss);
  }

 private:
  const Options& opt_;
  std::vector<BlockReport>& out_;
};

M randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

double dot(const M& a, const M& b) { return (a.array() * b.array()).sum(); }

std::vector<Point3> random_points(std::size_t n, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = Point3(u(rng), u(rng), u(rng));
  return pts;
}

void check_input(Checker& c, const std::string& block, M& x, const M& dx, const std::function<double()>& loss) {
  c.check(block, "input", x, dx, loss);
}

}  // namespace

std::vector<BlockReport> run_all(const Options& opt) {
  std::vector<BlockReport> out;
  Checker c(opt, out);
  std::mt19937_64 rng(opt.seed);

  {  // conv1x1
    M x = randn(5, 4, rng);
    auto p = nn::make_linear<double>(4, 3, rng);
    p.bias = randn(1, 3, rng);
    const M R = randn(5, 3, rng);
    auto loss = [&] { return dot(R, nn::conv1x1_forward(x, p)); };
    auto g = nn::zeros_like(p);
    const M dx = nn::conv1x1_backward(x, p, R, g);
    c.check_params("conv1x1", p, g, loss);
    check_input(c, "conv1x1", x, dx, loss);
  }
  {  // sigmoid
    M x = randn(4, 3, rng, 2.0);
    const M R = randn(4, 3, rng);
    auto loss = [&] { return dot(R, nn::sigmoid(x)); };
    check_input(c, "sigmoid", x, nn::sigmoid_backward(nn::sigmoid(x), R), loss);
  }
  for (const bool depthwise : {false, true}) {  // FlexConv
    const std::string block = depthwise ? "flexconv_depthwise" : "flexconv";
    const auto pts = random_points(12, rng, 1.0);
    const auto nbrs = nn::build_neighbor_table(pts, 4, 2);
    const M pos = nn::positions_matrix<double>(pts);
    const Eigen::Index cin = depthwise ? 4 : 3, cout = depthwise ? 4 : 5;
    M f = randn(12, cin, rng);
    auto p = nn::make_flexconv<double>(cin, cout, 4, 2, depthwise, rng);
    const M R = randn(12, cout, rng);
    auto loss = [&] { return dot(R, nn::flexconv_forward(pos, f, p, nbrs)); };
    nn::FlexConvCache<double> cache;
    nn::flexconv_forward(pos, f, p, nbrs, &cache);
    auto g = nn::zeros_like(p);
    const M df = nn::flexconv_backward(pos, p, nbrs, cache, R, g);
    c.check_params(block, p, g, loss);
    check_input(c, block, f, df, loss);
  }
  {  // squeeze-excite
    M U = randn(6, 8, rng);
    auto p = nn::make_se<double>(8, 4, rng);
    p.reduce.bias = randn(1, 2, rng, 0.5);
    p.expand.bias = randn(1, 8, rng, 0.5);
    const M R = randn(6, 8, rng);
    auto loss = [&] { return dot(R, nn::se_forward(U, p)); };
    nn::SECache<double> cache;
    nn::se_forward(U, p, &cache);
    auto g = nn::zeros_like(p);
    const M dU = nn::se_backward(U, p, cache, R, g);
    c.check_params("se", p, g, loss);
    check_input(c, "se", U, dU, loss);
  }
  {  // row L2 normalization
    M x = randn(5, 4, rng);
    const M R = randn(5, 4, rng);
    auto loss = [&] { return dot(R, nn::l2_normalize_rows(x)); };
    M norms;
    const M y = nn::l2_normalize_rows(x, &norms);
    check_input(c, "l2_normalize", x, nn::l2_normalize_rows_backward(y, norms, R), loss);
  }
  {  // softmax over points and over rows
    M x = randn(6, 1, rng);
    const M R = randn(6, 1, rng);
    auto loss = [&] { return dot(R, nn::softmax_column(x)); };
    check_input(c, "softmax_points", x, nn::softmax_column_backward(nn::softmax_column(x), R), loss);
    M z = randn(4, 3, rng);
    const M Rz = randn(4, 3, rng);
    auto lz = [&] { return dot(Rz, nn::softmax_rows(z)); };
    check_input(c, "softmax_rows", z, nn::softmax_rows_backward(nn::softmax_rows(z), Rz), lz);
  }
  {  // detector and attention MLPs
    auto make = [&](std::vector<Eigen::Index> w) {
      nn::Mlp<double> m;
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        m.layers.push_back(nn::make_linear<double>(w[i], w[i + 1], rng));
        m.layers.back().bias = randn(1, w[i + 1], rng, 0.3);
      }
      return m;
    };
    M psi = randn(7, 6, rng, 3.0);
    auto det = make({6, 5, 4, 3, 1});
    const M R = randn(7, 1, rng);
    auto ldet = [&] { return dot(R, nn::detector_forward(psi, det)); };
    nn::MlpCache<double> dc;
    nn::detector_forward(psi, det, &dc);
    auto gdet = nn::zeros_like(det);
    const M dpsi = nn::detector_backward(det, dc, R, gdet);
    c.check_params("detector", det, gdet, ldet);
    check_input(c, "detector", psi, dpsi, ldet);

    M feat = randn(7, 6, rng);
    auto att = make({6, 5, 4, 1});
    auto latt = [&] { return dot(R, nn::attention_forward(feat, att)); };
    nn::MlpCache<double> ac;
    nn::attention_forward(feat, att, &ac);
    auto gatt = nn::zeros_like(att);
    const M dfeat = nn::attention_backward(att, ac, R, gatt);
    c.check_params("attention", att, gatt, latt);
    check_input(c, "attention", feat, dfeat, latt);
  }
  {  // NetVLAD with attention weights
    M feat = randn(6, 4, rng);
    M att = nn::softmax_column<double>(randn(6, 1, rng));
    nn::NetVladParams<double> p;
    p.assign = nn::make_linear<double>(4, 3, rng);
    p.assign.bias = randn(1, 3, rng, 0.3);
    p.centers = randn(3, 4, rng, 0.5);
    p.fc = nn::make_linear<double>(12, 5, rng);
    p.fc.bias = randn(1, 5, rng, 0.1);
    const M R = randn(1, 5, rng);
    auto loss = [&] { return dot(R, nn::netvlad_forward(feat, att, p)); };
    nn::VladCache<double> cache;
    nn::netvlad_forward(feat, att, p, &cache);
    auto g = nn::zeros_like(p);
    M dfeat, datt;
    nn::netvlad_backward(feat, att, p, cache, R, g, dfeat, datt);
    c.check_params("netvlad", p, g, loss);
    check_input(c, "netvlad", feat, dfeat, loss);
    c.check("netvlad", "attention", att, datt, loss);
  }
  for (const auto mode : {nn::Aggregator::MaxPool, nn::Aggregator::AvgPool}) {  // pooling baselines
    const std::string block = mode == nn::Aggregator::MaxPool ? "maxpool" : "avgpool";
    M feat = randn(5, 4, rng);
    auto fc = nn::make_linear<double>(4, 6, rng);
    fc.bias = randn(1, 6, rng, 0.1);
    const M R = randn(1, 6, rng);
    auto loss = [&] { return dot(R, nn::pool_aggregate(feat, mode, fc)); };
    nn::PoolCache<double> cache;
    nn::pool_aggregate(feat, mode, fc, &cache);
    auto g = nn::zeros_like(fc);
    const M dfeat = nn::pool_aggregate_backward(feat, mode, fc, cache, R, g);
    c.check_params(block, fc, g, loss);
    check_input(c, block, feat, dfeat, loss);
  }

  // Toy architecture for the composed encoder and global head.
  nn::ArchConfig arch;
  arch.conv_width = 4;
  arch.flex1_width = 6;
  arch.descriptor_dim = 8;
  arch.k1 = 4;
  arch.d1 = 1;
  arch.k2 = 4;
  arch.d2 = 2;
  arch.se_reduction = 2;
  arch.det_w1 = 5;
  arch.det_w2 = 4;
  arch.det_w3 = 3;
  arch.proj1_width = 5;
  arch.proj2_width = 6;
  arch.proj_k = 4;
  arch.att_w1 = 4;
  arch.att_w2 = 3;
  arch.clusters = 3;
  arch.global_dim = 4;
  auto model = nn::init_model<double>(arch, derive_seed(opt.seed, 0xe7c));
  const PointCloud cloud = center_cloud(PointCloud(random_points(40, rng, 2.0))).cloud;
  {  // encoder: both branches, fusion and normalization
    const auto geom = nn::build_encoder_geometry(cloud, arch);
    const M Rpsi = randn(40, arch.descriptor_dim, rng), Rx = randn(40, arch.descriptor_dim, rng);
    auto loss = [&] {
      const auto o = nn::encoder_forward<double>(geom, model.encoder, nullptr);
      return dot(Rpsi, o.psi) + dot(Rx, o.x);
    };
    nn::EncoderCache<double> cache;
    const auto o = nn::encoder_forward<double>(geom, model.encoder, &cache);
    auto g = nn::zeros_like(model.encoder);
    nn::encoder_backward<double>(geom, model.encoder, cache, o, Rpsi, Rx, g);
    c.check_params("encoder", model.encoder, g, loss);
  }
  {  // global head: projections, attention, NetVLAD, compression
    arch.aggregate_points = 24;
    const auto geom = nn::build_head_geometry(cloud, arch);
    M x = nn::l2_normalize_rows<double>(randn(40, arch.descriptor_dim, rng));
    const M R = randn(1, arch.global_dim, rng);
    auto loss = [&] { return dot(R, nn::head_forward<double>(geom, x, model.head)); };
    nn::HeadCache<double> cache;
    nn::head_forward<double>(geom, x, model.head, &cache);
    auto g = nn::zeros_like(model.head);
    const M dx = nn::head_backward<double>(geom, x.rows(), model.head, cache, R, g);
    c.check_params("head", model.head, g, loss);
    check_input(c, "head", x, dx, loss);
  }

  loss::LossConfig lc;
  {  // description loss through the feature distance matrix
    M xa = nn::l2_normalize_rows<double>(randn(6, 4, rng)), xb = nn::l2_normalize_rows<double>(randn(6, 4, rng));
    CorrespondenceMatrix Mc;
    Mc.m.setZero(6, 6);
    for (int i = 0; i < 6; ++i) Mc.m(i, i) = 1;
    Mc.m(0, 1) = 1;
    auto loss = [&] { return loss::desc_loss(loss::feature_distance(xa, xb), Mc, lc); };
    const M D = loss::feature_distance(xa, xb);
    M dD, da, db;
    loss::desc_loss(D, Mc, lc, &dD);
    loss::feature_distance_backward(xa, xb, D, dD, da, db);
    c.check("desc_loss", "anchor", xa, da, loss);
    c.check("desc_loss", "paired", xb, db, loss);
  }
  {  // detector loss with fixed success rates
    M s = nn::sigmoid<double>(randn(6, 1, rng));
    const std::vector<double> asr{0.0, 0.2, 0.6, 0.8, 1.0, 0.4};
    auto loss = [&] { return loss::det_loss(s, std::span<const double>(asr), lc); };
    M ds;
    loss::det_loss(s, std::span<const double>(asr), lc, &ds);
    c.check("det_loss", "saliency", s, ds, loss);
  }
  {  // lazy quadruplet loss, margins kept active
    const int G = 5;
    M anchor = nn::l2_normalize_rows<double>(randn(1, G, rng));
    std::vector<M> pos, neg;
    for (int i = 0; i < 2; ++i) pos.push_back(nn::l2_normalize_rows<double>(anchor + randn(1, G, rng, 0.8)));
    for (int i = 0; i < 3; ++i) neg.push_back(nn::l2_normalize_rows<double>(anchor + randn(1, G, rng, 0.6)));
    M negstar = nn::l2_normalize_rows<double>(anchor + randn(1, G, rng, 0.6));
    loss::LossConfig big = lc;
    big.alpha = 2.0;
    big.beta = 2.0;
    auto loss = [&] { return loss::lazy_quadruplet_loss(anchor, pos, neg, negstar, big); };
    loss::QuadrupletGrads<double> g;
    loss::lazy_quadruplet_loss(anchor, pos, neg, negstar, big, &g);
    c.check("lazy_quadruplet", "anchor", anchor, g.anchor, loss);
    for (std::size_t i = 0; i < pos.size(); ++i) c.check("lazy_quadruplet", "positive" + std::to_string(i), pos[i], g.positives[i], loss);
    for (std::size_t i = 0; i < neg.size(); ++i) c.check("lazy_quadruplet", "negative" + std::to_string(i), neg[i], g.negatives[i], loss);
    c.check("lazy_quadruplet", "negstar", negstar, g.negstar, loss);
  }
  {  // weak-supervision triplet loss
    M a = randn(4, 3, rng), p = randn(3, 3, rng), n = randn(3, 3, rng);
    const double gamma = 5.0;  // every anchor row active
    auto loss = [&] { return loss::weak_triplet_loss(a, p, n, gamma); };
    loss::TripletGrads<double> g;
    loss::weak_triplet_loss(a, p, n, gamma, &g);
    c.check("weak_triplet", "anchor", a, g.anchor, loss);
    c.check("weak_triplet", "positive", p, g.positive, loss);
    c.check("weak_triplet", "negative", n, g.negative, loss);
  }
  return out;
}

bool all_passed(const std::vector<BlockReport>& reports) {
  return !reports.empty() && std::all_of(reports.begin(), reports.end(), [](const BlockReport& r) { return r.passed; });
}

}  // namespace pcdesc::gradcheck
