#include "pcdesc/model.hpp"

#include "pcdesc/neighbor_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pcdesc::nn {

const char* to_string(Aggregator a) {
  switch (a) {
    case Aggregator::NetVlad: return "netvlad";
    case Aggregator::MaxPool: return "maxpool";
    case Aggregator::AvgPool: return "avgpool";
  }
  return "netvlad";
}

Aggregator aggregator_from_string(const std::string& s) {
  if (s == "netvlad") return Aggregator::NetVlad;
  if (s == "maxpool" || s == "max") return Aggregator::MaxPool;
  if (s == "avgpool" || s == "avg") return Aggregator::AvgPool;
  fail(ErrorCode::Configuration, "unknown aggregator '" + s + "'");
}

void ArchConfig::validate() const {
  auto positive = [](int v, const char* name) {
    require(v >= 1, ErrorCode::Configuration, std::string("arch.") + name + " must be >= 1");
  };
  positive(conv_width, "conv_width");
  positive(flex1_width, "flex1_width");
  positive(descriptor_dim, "descriptor_dim");
  positive(k1, "k1");
  positive(d1, "d1");
  positive(k2, "k2");
  positive(d2, "d2");
  positive(se_reduction, "se_reduction");
  positive(det_w1, "det_w1");
  positive(det_w2, "det_w2");
  positive(det_w3, "det_w3");
  positive(proj1_width, "proj1_width");
  positive(proj2_width, "proj2_width");
  positive(proj_k, "proj_k");
  positive(proj_d, "proj_d");
  positive(att_w1, "att_w1");
  positive(att_w2, "att_w2");
  positive(clusters, "clusters");
  positive(global_dim, "global_dim");
  require(descriptor_dim % se_reduction == 0, ErrorCode::Configuration,
          "arch.se_reduction must divide arch.descriptor_dim");
  require(coarse_ratio > 0.0 && coarse_ratio <= 1.0, ErrorCode::Configuration,
          "arch.coarse_ratio must lie in (0, 1]");
  require(aggregate_points >= 0, ErrorCode::Configuration, "arch.aggregate_points must be >= 0");
}

namespace {

template <class T>
std::vector<std::pair<std::string, Mat<T>*>> collect(ModelParams<T>& m) {
  std::vector<std::pair<std::string, Mat<T>*>> out;
  for_each_param(m, [&](const std::string& name, Mat<T>& p) { out.emplace_back(name, &p); });
  return out;
}

template <class T>
Mlp<T> make_mlp(const std::vector<int>& widths, std::mt19937_64& rng) {
  Mlp<T> mlp;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    mlp.layers.push_back(make_linear<T>(widths[i], widths[i + 1], rng, i + 2 == widths.size() ? 0.5 : 1.0));
  return mlp;
}

template <class T>
EncoderBranch<T> make_branch(const ArchConfig& a, std::mt19937_64& rng) {
  EncoderBranch<T> b;
  // raw xyz spans meters; a smaller gain keeps first activations O(1)
  b.conv = make_linear<T>(3, a.conv_width, rng, 0.2);
  b.flex1 = make_flexconv<T>(a.conv_width, a.flex1_width, a.k1, a.d1, false, rng);
  b.flex2 = make_flexconv<T>(a.flex1_width, a.descriptor_dim, a.k2, a.d2, false, rng);
  b.se = make_se<T>(a.descriptor_dim, a.se_reduction, rng);
  return b;
}

}  // namespace

template <class T>
ModelParams<T> init_model(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> m;
  m.arch = arch;
  m.encoder.fine = make_branch<T>(arch, rng);
  m.encoder.coarse = make_branch<T>(arch, rng);
  m.detector = make_mlp<T>({arch.descriptor_dim, arch.det_w1, arch.det_w2, arch.det_w3, 1}, rng);
  m.head.mode = arch.aggregator;
  if (arch.aggregator == Aggregator::NetVlad) {
    m.head.proj1 = make_flexconv<T>(arch.descriptor_dim, arch.proj1_width, arch.proj_k, arch.proj_d, false, rng);
    m.head.proj2 = make_flexconv<T>(arch.proj1_width, arch.proj2_width, arch.proj_k, arch.proj_d, false, rng);
    m.head.attention = make_mlp<T>({arch.proj2_width, arch.att_w1, arch.att_w2, 1}, rng);
    auto& v = m.head.netvlad;
    v.assign = make_linear<T>(arch.proj2_width, arch.clusters, rng);
    v.centers.resize(arch.clusters, arch.proj2_width);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < v.centers.size(); ++i) v.centers.data()[i] = static_cast<T>(dist(rng));
    v.fc = make_linear<T>(static_cast<Eigen::Index>(arch.clusters) * arch.proj2_width, arch.global_dim, rng);
  } else {
    m.head.pool_fc = make_linear<T>(arch.descriptor_dim, arch.global_dim, rng);
  }
  return m;
}

template <class To, class From>
ModelParams<To> cast_model(const ModelParams<From>& m) {
  ModelParams<From> src = m;
  ModelParams<To> dst = init_model<To>(m.arch, 0);
  auto a = collect(src);
  auto b = collect(dst);
  for (std::size_t i = 0; i < a.size(); ++i) *b[i].second = a[i].second->template cast<To>();
  return dst;
}

template <class T>
std::vector<std::string> parameter_names(const ModelParams<T>& m) {
  ModelParams<T> copy = m;
  std::vector<std::string> names;
  for (auto& [name, p] : collect(copy)) names.push_back(name);
  return names;
}

template <class T>
std::uint64_t parameter_hash(const ModelParams<T>& m, const std::string& prefix) {
  ModelParams<T> copy = m;
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto& [name, p] : collect(copy)) {
    if (name.rfind(prefix, 0) != 0) continue;
    mix(name.data(), name.size());
    mix(p->data(), static_cast<std::size_t>(p->size()) * sizeof(T));
  }
  return h;
}

std::vector<std::uint32_t> farthest_point_sample(const std::vector<Point3>& points, std::size_t count) {
  require(count >= 1 && count <= points.size(), ErrorCode::InvalidArgument,
          "farthest_point_sample: count must lie in [1, N]");
  const std::size_t n = points.size();
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (points[i].squaredNorm() < points[first].squaredNorm()) first = i;
  std::vector<std::uint32_t> picked;
  picked.reserve(count);
  std::vector<double> mind(n, std::numeric_limits<double>::infinity());
  std::size_t cur = first;
  for (std::size_t s = 0; s < count; ++s) {
    picked.push_back(static_cast<std::uint32_t>(cur));
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      mind[i] = std::min(mind[i], (points[i] - points[cur]).squaredNorm());
      if (mind[i] > best_d) {
        best_d = mind[i];
        best = i;
      }
    }
    cur = best;
  }
  return picked;
}

EncoderGeometry build_encoder_geometry(const PointCloud& centered, const ArchConfig& arch) {
  validate_cloud(centered);
  const Point3 c = centered.centroid();
  require(c.norm() <= 1e-6, ErrorCode::InvalidArgument,
          "encoder input must be centered (centroid within 1e-6 of the origin)");
  EncoderGeometry g;
  g.fine_points = centered.points;
  const std::size_t n = g.fine_points.size();
  const std::size_t min_needed = std::max<std::size_t>(
      static_cast<std::size_t>((arch.k1 - 1) * arch.d1 + 1), static_cast<std::size_t>((arch.k2 - 1) * arch.d2 + 1));
  std::size_t coarse_n = static_cast<std::size_t>(std::llround(static_cast<double>(n) * arch.coarse_ratio));
  coarse_n = std::clamp(coarse_n, std::min(min_needed, n), n);
  g.coarse_indices = farthest_point_sample(g.fine_points, coarse_n);
  g.coarse_points.reserve(coarse_n);
  for (auto i : g.coarse_indices) g.coarse_points.push_back(g.fine_points[i]);

  const NeighborIndex coarse_index(g.coarse_points);
  g.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    g.assignment[i] = static_cast<std::uint32_t>(coarse_index.nearest(g.fine_points[i]).index);

  g.fine_nbrs1 = build_neighbor_table(g.fine_points, arch.k1, arch.d1);
  g.fine_nbrs2 = build_neighbor_table(g.fine_points, arch.k2, arch.d2);
  g.coarse_nbrs1 = build_neighbor_table(g.coarse_points, arch.k1, arch.d1);
  g.coarse_nbrs2 = build_neighbor_table(g.coarse_points, arch.k2, arch.d2);
  return g;
}

HeadGeometry build_head_geometry(const PointCloud& centered, const ArchConfig& arch) {
  validate_cloud(centered);
  const std::size_t n = centered.size();
  HeadGeometry g;
  const auto want = static_cast<std::size_t>(arch.aggregate_points);
  require(want <= n, ErrorCode::InvalidArgument,
          "cloud has fewer points than the aggregation count");
  if (want == 0 || want == n) {
    g.indices.resize(n);
    std::iota(g.indices.begin(), g.indices.end(), 0U);
  } else {
    g.indices = farthest_point_sample(centered.points, want);
  }
  for (auto i : g.indices) g.points.push_back(centered[i]);
  if (arch.aggregator == Aggregator::NetVlad) {
    g.nbrs1 = build_neighbor_table(g.points, arch.proj_k, arch.proj_d);
    g.nbrs2 = build_neighbor_table(g.points, arch.proj_k, arch.proj_d);
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
Mat<T> branch_forward(const std::vector<Point3>& pts, const NeighborTable& n1, const NeighborTable& n2,
                      const EncoderBranch<T>& b, BranchCache<T>& c) {
  c.positions = positions_matrix<T>(pts);
  c.h0 = relu<T>(conv1x1_forward<T>(c.positions, b.conv));
  c.h1 = relu<T>(flexconv_forward<T>(c.positions, c.h0, b.flex1, n1, &c.f1));
  c.u = flexconv_forward<T>(c.positions, c.h1, b.flex2, n2, &c.f2);
  c.out = se_forward<T>(c.u, b.se, &c.se);
  return c.out;
}

template <class T>
void branch_backward(const NeighborTable& n1, const NeighborTable& n2, const EncoderBranch<T>& b,
                     const BranchCache<T>& c, const Mat<T>& dout, EncoderBranch<T>& g) {
  Mat<T> d = se_backward<T>(c.u, b.se, c.se, dout, g.se);
  d = flexconv_backward<T>(c.positions, b.flex2, n2, c.f2, d, g.flex2);
  d = relu_backward<T>(c.h1, d);
  d = flexconv_backward<T>(c.positions, b.flex1, n1, c.f1, d, g.flex1);
  d = relu_backward<T>(c.h0, d);
  conv1x1_backward<T>(c.positions, b.conv, d, g.conv);
}

}  // namespace

template <class T>
EncoderOutput<T> encoder_forward(const EncoderGeometry& geom, const EncoderParams<T>& p, EncoderCache<T>* cache) {
  EncoderCache<T> local;
  EncoderCache<T>& c = cache ? *cache : local;
  const Mat<T> fine = branch_forward<T>(geom.fine_points, geom.fine_nbrs1, geom.fine_nbrs2, p.fine, c.fine);
  const Mat<T> coarse =
      branch_forward<T>(geom.coarse_points, geom.coarse_nbrs1, geom.coarse_nbrs2, p.coarse, c.coarse);
  EncoderOutput<T> out;
  out.psi = fine + gather_rows<T>(coarse, geom.assignment);
  out.x = l2_normalize_rows<T>(out.psi, &c.norms, &out.zero_rows);
  check_finite(out.psi, "encoder output");
  return out;
}

template <class T>
EncoderOutput<T> encoder_forward(const PointCloud& centered, const ModelParams<T>& m) {
  const EncoderGeometry geom = build_encoder_geometry(centered, m.arch);
  return encoder_forward<T>(geom, m.encoder, nullptr);
}

template <class T>
void encoder_backward(const EncoderGeometry& geom, const EncoderParams<T>& p, const EncoderCache<T>& cache,
                      const EncoderOutput<T>& out, const Mat<T>& dpsi, const Mat<T>& dx,
                      EncoderParams<T>& grad) {
  Mat<T> d = Mat<T>::Zero(out.psi.rows(), out.psi.cols());
  if (dpsi.size() > 0) d += dpsi;
  if (dx.size() > 0) d += l2_normalize_rows_backward<T>(out.x, cache.norms, dx);
  Mat<T> dcoarse = Mat<T>::Zero(cache.coarse.out.rows(), cache.coarse.out.cols());
  scatter_add_rows<T>(d, geom.assignment, dcoarse);
  branch_backward<T>(geom.fine_nbrs1, geom.fine_nbrs2, p.fine, cache.fine, d, grad.fine);
  branch_backward<T>(geom.coarse_nbrs1, geom.coarse_nbrs2, p.coarse, cache.coarse, dcoarse, grad.coarse);
}

namespace {

template <class T>
constexpr T kRmsEps = T(1e-12);

// Residual sums at or below this norm count as an empty cluster.
template <class T>
constexpr T kVladEmpty = T(1e-12);

template <class T>
Mat<T> mlp_forward(const Mat<T>& input, const Mlp<T>& p, MlpCache<T>& c) {
  check_shape(!p.layers.empty(), "empty MLP");
  c.inputs.clear();
  Mat<T> cur = input;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    c.inputs.push_back(cur);
    cur = conv1x1_forward<T>(cur, p.layers[i]);
    if (i + 1 < p.layers.size()) cur = relu<T>(cur);
  }
  return cur;
}

template <class T>
Mat<T> mlp_backward(const Mlp<T>& p, const MlpCache<T>& c, Mat<T> d, Mlp<T>& g) {
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    d = conv1x1_backward<T>(c.inputs[i], p.layers[i], d, g.layers[i]);
    if (i > 0) d = relu_backward<T>(c.inputs[i], d);
  }
  return d;
}

}  // namespace

template <class T>
Mat<T> detector_forward(const Mat<T>& psi, const Mlp<T>& p, MlpCache<T>* cache) {
  MlpCache<T> local;
  MlpCache<T>& c = cache ? *cache : local;
  check_shape(!p.layers.empty() && p.layers.back().out_dim() == 1, "detector must end in one channel");
  check_shape(psi.rows() >= 1, "detector input");
  c.input_rms = std::sqrt(psi.squaredNorm() / static_cast<T>(psi.rows()) + kRmsEps<T>);
  c.output = sigmoid<T>(mlp_forward<T>(psi / c.input_rms, p, c));
  return c.output;
}

template <class T>
Mat<T> detector_backward(const Mlp<T>& p, const MlpCache<T>& cache, const Mat<T>& dsal, Mlp<T>& grad) {
  const Mat<T> dy = mlp_backward<T>(p, cache, sigmoid_backward<T>(cache.output, dsal), grad);
  const Mat<T>& y = cache.inputs.front();
  const T proj = (dy.array() * y.array()).sum() / static_cast<T>(y.rows());
  return (dy - proj * y) / cache.input_rms;
}

template <class T>
Mat<T> attention_forward(const Mat<T>& features, const Mlp<T>& p, MlpCache<T>* cache) {
  MlpCache<T> local;
  MlpCache<T>& c = cache ? *cache : local;
  check_shape(!p.layers.empty() && p.layers.back().out_dim() == 1, "attention must end in one channel");
  c.output = softmax_column<T>(mlp_forward<T>(features, p, c));
  return c.output;
}

template <class T>
Mat<T> attention_backward(const Mlp<T>& p, const MlpCache<T>& cache, const Mat<T>& datt, Mlp<T>& grad) {
  return mlp_backward<T>(p, cache, softmax_column_backward<T>(cache.output, datt), grad);
}

template <class T>
Mat<T> netvlad_forward(const Mat<T>& features, const Mat<T>& attention, const NetVladParams<T>& p,
                       VladCache<T>* cache, bool* degenerate) {
  VladCache<T> local;
  VladCache<T>& c = cache ? *cache : local;
  const Eigen::Index n = features.rows();
  const Eigen::Index C = features.cols();
  const Eigen::Index K = p.clusters();
  check_shape(attention.rows() == n && attention.cols() == 1, "netvlad attention");
  check_shape(p.centers.cols() == C && p.assign.in_dim() == C && p.assign.out_dim() == K, "netvlad clusters");
  check_shape(p.fc.in_dim() == K * C, "netvlad compression");

  c.assign = softmax_rows<T>(conv1x1_forward<T>(features, p.assign));
  Mat<T> aw = c.assign;
  for (Eigen::Index i = 0; i < n; ++i) aw.row(i) *= attention(i, 0);
  Mat<T> vlad = aw.transpose() * features;
  const Mat<T> mass = aw.colwise().sum();
  for (Eigen::Index k = 0; k < K; ++k) vlad.row(k) -= mass(0, k) * p.centers.row(k);

  c.vlad_norm = l2_normalize_rows<T>(vlad, &c.intra_norms);
  for (Eigen::Index k = 0; k < K; ++k)
    if (c.intra_norms(k, 0) <= kVladEmpty<T>) {
      c.vlad_norm.row(k).setZero();
      c.intra_norms(k, 0) = T(0);
    }
  const Mat<T> flat = Eigen::Map<const Mat<T>>(c.vlad_norm.data(), 1, K * C);
  c.flat = l2_normalize_rows<T>(flat, &c.flat_norm);
  bool degen = c.flat_norm(0, 0) == T(0);
  c.compressed = conv1x1_forward<T>(c.flat, p.fc);
  if (degen) c.compressed.setZero();
  c.output = l2_normalize_rows<T>(c.compressed, &c.out_norm);
  degen = degen || c.out_norm(0, 0) == T(0);
  if (degenerate) *degenerate = degen;
  return c.output;
}

template <class T>
void netvlad_backward(const Mat<T>& features, const Mat<T>& attention, const NetVladParams<T>& p,
                      const VladCache<T>& c, const Mat<T>& dout, NetVladParams<T>& grad,
                      Mat<T>& dfeatures, Mat<T>& dattention) {
  const Eigen::Index n = features.rows();
  const Eigen::Index C = features.cols();
  const Eigen::Index K = p.clusters();
  dfeatures = Mat<T>::Zero(n, C);
  dattention = Mat<T>::Zero(n, 1);
  if (c.flat_norm(0, 0) == T(0) || c.out_norm(0, 0) == T(0)) return;

  const Mat<T> dcomp = l2_normalize_rows_backward<T>(c.output, c.out_norm, dout);
  const Mat<T> dflat_n = conv1x1_backward<T>(c.flat, p.fc, dcomp, grad.fc);
  const Mat<T> dflat = l2_normalize_rows_backward<T>(c.flat, c.flat_norm, dflat_n);
  const Mat<T> dvn = Eigen::Map<const Mat<T>>(dflat.data(), K, C);
  const Mat<T> dv = l2_normalize_rows_backward<T>(c.vlad_norm, c.intra_norms, dvn);

  Mat<T> aw = c.assign;
  for (Eigen::Index i = 0; i < n; ++i) aw.row(i) *= attention(i, 0);
  const Mat<T> mass = aw.colwise().sum();
  for (Eigen::Index k = 0; k < K; ++k) grad.centers.row(k) -= mass(0, k) * dv.row(k);

  dfeatures.noalias() = aw * dv;
  Mat<T> daw = features * dv.transpose();
  for (Eigen::Index k = 0; k < K; ++k) {
    const T s = dv.row(k).dot(p.centers.row(k));
    daw.col(k).array() -= s;
  }
  Mat<T> da = daw;
  for (Eigen::Index i = 0; i < n; ++i) {
    da.row(i) *= attention(i, 0);
    dattention(i, 0) = daw.row(i).dot(c.assign.row(i));
  }
  const Mat<T> dlogits = softmax_rows_backward<T>(c.assign, da);
  dfeatures += conv1x1_backward<T>(features, p.assign, dlogits, grad.assign);
}

template <class T>
Mat<T> pool_aggregate(const Mat<T>& features, Aggregator mode, const Linear<T>& fc, PoolCache<T>* cache) {
  PoolCache<T> local;
  PoolCache<T>& c = cache ? *cache : local;
  check_shape(features.rows() >= 1, "pooling needs at least one point");
  check_shape(mode != Aggregator::NetVlad, "pool_aggregate expects a pooling mode");
  const Eigen::Index C = features.cols();
  c.pooled.resize(1, C);
  c.argmax.assign(static_cast<std::size_t>(C), 0);
  if (mode == Aggregator::MaxPool) {
    for (Eigen::Index j = 0; j < C; ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < features.rows(); ++i)
        if (features(i, j) > features(best, j)) best = i;
      c.argmax[static_cast<std::size_t>(j)] = best;
      c.pooled(0, j) = features(best, j);
    }
  } else {
    c.pooled = features.colwise().mean();
  }
  c.compressed = conv1x1_forward<T>(c.pooled, fc);
  c.output = l2_normalize_rows<T>(c.compressed, &c.norm);
  return c.output;
}

template <class T>
Mat<T> pool_aggregate_backward(const Mat<T>& features, Aggregator mode, const Linear<T>& fc,
                               const PoolCache<T>& c, const Mat<T>& dout, Linear<T>& grad) {
  const Mat<T> dcomp = l2_normalize_rows_backward<T>(c.output, c.norm, dout);
  const Mat<T> dpooled = conv1x1_backward<T>(c.pooled, fc, dcomp, grad);
  Mat<T> df = Mat<T>::Zero(features.rows(), features.cols());
  if (mode == Aggregator::MaxPool) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) df(c.argmax[static_cast<std::size_t>(j)], j) = dpooled(0, j);
  } else {
    const T inv = T(1) / static_cast<T>(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) df.row(i) = dpooled.row(0) * inv;
  }
  return df;
}

template <class T>
Mat<T> head_forward(const HeadGeometry& geom, const Mat<T>& x, const HeadParams<T>& p, HeadCache<T>* cache,
                    bool* degenerate) {
  HeadCache<T> local;
  HeadCache<T>& c = cache ? *cache : local;
  c.input = gather_rows<T>(x, geom.indices);
  if (degenerate) *degenerate = false;
  if (p.mode != Aggregator::NetVlad) {
    Mat<T> g = pool_aggregate<T>(c.input, p.mode, p.pool_fc, &c.pool);
    if (degenerate) *degenerate = c.pool.norm(0, 0) == T(0);
    return g;
  }
  c.positions = positions_matrix<T>(geom.points);
  c.p1 = relu<T>(flexconv_forward<T>(c.positions, c.input, p.proj1, geom.nbrs1, &c.f1));
  c.p2 = flexconv_forward<T>(c.positions, c.p1, p.proj2, geom.nbrs2, &c.f2);
  c.weights = attention_forward<T>(c.p2, p.attention, &c.attention);
  Mat<T> g = netvlad_forward<T>(c.p2, c.weights, p.netvlad, &c.vlad, degenerate);
  check_finite(g, "global descriptor");
  return g;
}

template <class T>
Mat<T> head_backward(const HeadGeometry& geom, Eigen::Index n_points, const HeadParams<T>& p,
                     const HeadCache<T>& c, const Mat<T>& dout, HeadParams<T>& grad) {
  Mat<T> dinput;
  if (p.mode != Aggregator::NetVlad) {
    dinput = pool_aggregate_backward<T>(c.input, p.mode, p.pool_fc, c.pool, dout, grad.pool_fc);
  } else {
    Mat<T> dp2, datt;
    netvlad_backward<T>(c.p2, c.weights, p.netvlad, c.vlad, dout, grad.netvlad, dp2, datt);
    dp2 += attention_backward<T>(p.attention, c.attention, datt, grad.attention);
    Mat<T> d = flexconv_backward<T>(c.positions, p.proj2, geom.nbrs2, c.f2, dp2, grad.proj2);
    d = relu_backward<T>(c.p1, d);
    dinput = flexconv_backward<T>(c.positions, p.proj1, geom.nbrs1, c.f1, d, grad.proj1);
  }
  Mat<T> dx = Mat<T>::Zero(n_points, dinput.cols());
  scatter_add_rows<T>(dinput, geom.indices, dx);
  return dx;
}

template <class T>
Extraction<T> extract(const ModelParams<T>& m, const PointCloud& cloud) {
  auto centered = center_cloud(cloud);
  Extraction<T> e;
  e.centroid = centered.centroid;
  e.centered = std::move(centered.cloud);
  const EncoderGeometry eg = build_encoder_geometry(e.centered, m.arch);
  auto enc = encoder_forward<T>(eg, m.encoder, nullptr);
  e.saliency = detector_forward<T>(enc.psi, m.detector, nullptr);
  const HeadGeometry hg = build_head_geometry(e.centered, m.arch);
  e.global = head_forward<T>(hg, enc.x, m.head, nullptr, &e.degenerate);
  e.psi = std::move(enc.psi);
  e.x = std::move(enc.x);
  return e;
}

#define PCDESC_INSTANTIATE_MODEL(T)                                                                    \
  template ModelParams<T> init_model<T>(const ArchConfig&, std::uint64_t);                           \
  template std::vector<std::string> parameter_names<T>(const ModelParams<T>&);                       \
  template std::uint64_t parameter_hash<T>(const ModelParams<T>&, const std::string&);               \
  template EncoderOutput<T> encoder_forward<T>(const EncoderGeometry&, const EncoderParams<T>&,      \
                                               EncoderCache<T>*);                                    \
  template EncoderOutput<T> encoder_forward<T>(const PointCloud&, const ModelParams<T>&);            \
  template void encoder_backward<T>(const EncoderGeometry&, const EncoderParams<T>&,                 \
                                    const EncoderCache<T>&, const EncoderOutput<T>&, const Mat<T>&,  \
                                    const Mat<T>&, EncoderParams<T>&);                               \
  template Mat<T> detector_forward<T>(const Mat<T>&, const Mlp<T>&, MlpCache<T>*);                   \
  template Mat<T> detector_backward<T>(const Mlp<T>&, const MlpCache<T>&, const Mat<T>&, Mlp<T>&);   \
  template Mat<T> attention_forward<T>(const Mat<T>&, const Mlp<T>&, MlpCache<T>*);                  \
  template Mat<T> attention_backward<T>(const Mlp<T>&, const MlpCache<T>&, const Mat<T>&, Mlp<T>&);  \
  template Mat<T> netvlad_forward<T>(const Mat<T>&, const Mat<T>&, const NetVladParams<T>&,          \
                                     VladCache<T>*, bool*);                                          \
  template void netvlad_backward<T>(const Mat<T>&, const Mat<T>&, const NetVladParams<T>&,           \
                                    const VladCache<T>&, const Mat<T>&, NetVladParams<T>&, Mat<T>&,  \
                                    Mat<T>&);                                                        \
  template Mat<T> pool_aggregate<T>(const Mat<T>&, Aggregator, const Linear<T>&, PoolCache<T>*);     \
  template Mat<T> pool_aggregate_backward<T>(const Mat<T>&, Aggregator, const Linear<T>&,            \
                                             const PoolCache<T>&, const Mat<T>&, Linear<T>&);        \
  template Mat<T> head_forward<T>(const HeadGeometry&, const Mat<T>&, const HeadParams<T>&,          \
                                  HeadCache<T>*, bool*);                                             \
  template Mat<T> head_backward<T>(const HeadGeometry&, Eigen::Index, const HeadParams<T>&,          \
                                   const HeadCache<T>&, const Mat<T>&, HeadParams<T>&);              \
  template Extraction<T> extract<T>(const ModelParams<T>&, const PointCloud&);

PCDESC_INSTANTIATE_MODEL(float)
PCDESC_INSTANTIATE_MODEL(double)

template ModelParams<double> cast_model<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_model<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_model<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_model<double, double>(const ModelParams<double>&);

}  // namespace pcdesc::nn
