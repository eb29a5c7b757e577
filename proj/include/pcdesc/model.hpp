#pragma once

#include "pcdesc/geometry.hpp"
#include "pcdesc/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pcdesc::nn {

enum class Aggregator { NetVlad, MaxPool, AvgPool };

const char* to_string(Aggregator a);
Aggregator aggregator_from_string(const std::string& s);

/// Layer widths and neighborhood settings. All defaults are plain choices for
/// a CPU-sized model and can be overridden from the config file.
struct ArchConfig {
  // local encoder, identical layout for both resolutions
  int conv_width = 32;
  int flex1_width = 64;
  int descriptor_dim = 128;  // D, output of the second FlexConv
  int k1 = 9, d1 = 1;
  int k2 = 9, d2 = 2;
  int se_reduction = 4;
  double coarse_ratio = 0.25;  // second resolution keeps N * ratio points

  // detector: D -> det_w1 -> det_w2 -> det_w3 -> 1
  int det_w1 = 128, det_w2 = 64, det_w3 = 32;

  // global assembler
  Aggregator aggregator = Aggregator::NetVlad;
  int proj1_width = 256, proj2_width = 1024;
  int proj_k = 9, proj_d = 1;
  int att_w1 = 256, att_w2 = 64;  // attention: C -> att_w1 -> att_w2 -> 1
  int clusters = 64;
  int global_dim = 256;
  int aggregate_points = 0;  // 0 keeps all points before aggregation

  /// Throws configuration error on impossible combinations.
  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(join_name(prefix, "l" + std::to_string(i)), f);
  }
};

template <class T>
struct EncoderBranch {
  Linear<T> conv;
  FlexConv<T> flex1, flex2;
  SqueezeExcite<T> se;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    conv.visit(join_name(prefix, "conv"), f);
    flex1.visit(join_name(prefix, "flex1"), f);
    flex2.visit(join_name(prefix, "flex2"), f);
    se.visit(join_name(prefix, "se"), f);
  }
};

template <class T>
struct EncoderParams {
  EncoderBranch<T> fine, coarse;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    fine.visit(join_name(prefix, "fine"), f);
    coarse.visit(join_name(prefix, "coarse"), f);
  }
};

template <class T>
struct NetVladParams {
  Linear<T> assign;  // K × C soft-assignment
  Mat<T> centers;    // K × C
  Linear<T> fc;      // G × K·C compression

  Eigen::Index clusters() const { return centers.rows(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    assign.visit(join_name(prefix, "assign"), f);
    f(join_name(prefix, "centers"), centers);
    fc.visit(join_name(prefix, "fc"), f);
  }
};

template <class T>
struct HeadParams {
  Aggregator mode = Aggregator::NetVlad;
  FlexConv<T> proj1, proj2;
  Mlp<T> attention;
  NetVladParams<T> netvlad;
  Linear<T> pool_fc;  // pooling baselines only: D -> G

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    if (mode == Aggregator::NetVlad) {
      proj1.visit(join_name(prefix, "proj1"), f);
      proj2.visit(join_name(prefix, "proj2"), f);
      attention.visit(join_name(prefix, "attention"), f);
      netvlad.visit(join_name(prefix, "netvlad"), f);
    } else {
      pool_fc.visit(join_name(prefix, "pool_fc"), f);
    }
  }
};

template <class T>
struct ModelParams {
  ArchConfig arch;
  EncoderParams<T> encoder;
  Mlp<T> detector;
  HeadParams<T> head;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    encoder.visit(join_name(prefix, "encoder"), f);
    detector.visit(join_name(prefix, "detector"), f);
    head.visit(join_name(prefix, "head"), f);
  }
};

template <class T>
ModelParams<T> init_model(const ArchConfig& arch, std::uint64_t seed);

template <class To, class From>
ModelParams<To> cast_model(const ModelParams<From>& m);

/// Parameter names in registry order.
template <class T>
std::vector<std::string> parameter_names(const ModelParams<T>& m);

/// FNV-1a over the raw bytes of every parameter whose name starts with prefix.
template <class T>
std::uint64_t parameter_hash(const ModelParams<T>& m, const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Geometry shared by all layers of one forward pass (depends only on points).
// ---------------------------------------------------------------------------

/// Farthest point sampling seeded at the point nearest the origin; ties by
/// lower index. Returns `count` indices in selection order.
std::vector<std::uint32_t> farthest_point_sample(const std::vector<Point3>& points, std::size_t count);

struct EncoderGeometry {
  std::vector<Point3> fine_points;
  std::vector<Point3> coarse_points;
  std::vector<std::uint32_t> coarse_indices;  // coarse -> fine index
  std::vector<std::uint32_t> assignment;      // fine -> nearest coarse index
  NeighborTable fine_nbrs1, fine_nbrs2, coarse_nbrs1, coarse_nbrs2;
};

/// Throws invalid-argument when the cloud is not centered (centroid > 1e-6).
EncoderGeometry build_encoder_geometry(const PointCloud& centered, const ArchConfig& arch);

struct HeadGeometry {
  std::vector<std::uint32_t> indices;  // aggregated points -> input rows
  std::vector<Point3> points;
  NeighborTable nbrs1, nbrs2;
};

/// Selects the aggregation points. Throws invalid-argument when the cloud has
/// fewer points than arch.aggregate_points.
HeadGeometry build_head_geometry(const PointCloud& centered, const ArchConfig& arch);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <class T>
struct BranchCache {
  Mat<T> positions, h0, h1, u, out;
  FlexConvCache<T> f1, f2;
  SECache<T> se;
};

template <class T>
struct EncoderCache {
  BranchCache<T> fine, coarse;
  Mat<T> norms;
};

template <class T>
struct EncoderOutput {
  Mat<T> psi;  // N × D fused features
  Mat<T> x;    // N × D row-normalized descriptors
  std::size_t zero_rows = 0;
};

template <class T>
EncoderOutput<T> encoder_forward(const EncoderGeometry& geom, const EncoderParams<T>& p,
                                 EncoderCache<T>* cache = nullptr);
template <class T>
EncoderOutput<T> encoder_forward(const PointCloud& centered, const ModelParams<T>& m);

/// Accumulates parameter gradients from upstream gradients on Ψ and X
/// (either may be empty).
template <class T>
void encoder_backward(const EncoderGeometry& geom, const EncoderParams<T>& p, const EncoderCache<T>& cache,
                      const EncoderOutput<T>& out, const Mat<T>& dpsi, const Mat<T>& dx,
                      EncoderParams<T>& grad);

template <class T>
struct MlpCache {
  std::vector<Mat<T>> inputs;  // input of each layer
  Mat<T> output;               // after the final activation
  T input_rms = T(1);          // detector only: RMS row norm of Ψ
};

/// Per-point MLP, ReLU between layers and sigmoid at the end. N × 1 in (0,1).
/// Ψ is first divided by its RMS row norm over the cloud, so the detector
/// sees the same scale whatever the encoder's output magnitude.
template <class T>
Mat<T> detector_forward(const Mat<T>& psi, const Mlp<T>& p, MlpCache<T>* cache = nullptr);
template <class T>
Mat<T> detector_backward(const Mlp<T>& p, const MlpCache<T>& cache, const Mat<T>& dsal, Mlp<T>& grad);

/// Per-point MLP followed by a softmax over points. N × 1, sums to one.
template <class T>
Mat<T> attention_forward(const Mat<T>& features, const Mlp<T>& p, MlpCache<T>* cache = nullptr);
template <class T>
Mat<T> attention_backward(const Mlp<T>& p, const MlpCache<T>& cache, const Mat<T>& datt, Mlp<T>& grad);

template <class T>
struct VladCache {
  Mat<T> assign;        // N × K soft assignment
  Mat<T> vlad_norm;     // K × C intra-normalized residual sums
  Mat<T> intra_norms;   // K × 1
  Mat<T> flat;          // 1 × K·C after global normalization
  Mat<T> flat_norm;     // 1 × 1
  Mat<T> compressed;    // 1 × G after FC
  Mat<T> output;        // 1 × G final
  Mat<T> out_norm;      // 1 × 1
};

/// Attention-weighted NetVLAD, intra + global normalization, FC, final L2.
/// A cluster whose residual sum has norm <= 1e-12 is treated as empty; when
/// every cluster is empty the result is the zero descriptor with
/// *degenerate = true.
template <class T>
Mat<T> netvlad_forward(const Mat<T>& features, const Mat<T>& attention, const NetVladParams<T>& p,
                       VladCache<T>* cache = nullptr, bool* degenerate = nullptr);
template <class T>
void netvlad_backward(const Mat<T>& features, const Mat<T>& attention, const NetVladParams<T>& p,
                      const VladCache<T>& cache, const Mat<T>& dout, NetVladParams<T>& grad,
                      Mat<T>& dfeatures, Mat<T>& dattention);

template <class T>
struct PoolCache {
  std::vector<Eigen::Index> argmax;  // per column, max mode
  Mat<T> pooled, compressed, norm, output;
};

/// Column-wise max or mean, FC to G, L2 normalize.
template <class T>
Mat<T> pool_aggregate(const Mat<T>& features, Aggregator mode, const Linear<T>& fc,
                      PoolCache<T>* cache = nullptr);
template <class T>
Mat<T> pool_aggregate_backward(const Mat<T>& features, Aggregator mode, const Linear<T>& fc,
                               const PoolCache<T>& cache, const Mat<T>& dout, Linear<T>& grad);

template <class T>
struct HeadCache {
  Mat<T> input;  // aggregated rows of X
  Mat<T> positions;
  Mat<T> p1, p2;
  FlexConvCache<T> f1, f2;
  MlpCache<T> attention;
  Mat<T> weights;
  VladCache<T> vlad;
  PoolCache<T> pool;
};

/// Global descriptor (1 × G) from the local descriptor map X (N × D).
template <class T>
Mat<T> head_forward(const HeadGeometry& geom, const Mat<T>& x, const HeadParams<T>& p,
                    HeadCache<T>* cache = nullptr, bool* degenerate = nullptr);
/// Returns dL/dX (N × D, zero on rows not aggregated).
template <class T>
Mat<T> head_backward(const HeadGeometry& geom, Eigen::Index n_points, const HeadParams<T>& p,
                     const HeadCache<T>& cache, const Mat<T>& dout, HeadParams<T>& grad);

/// Everything produced by one forward pass over a cloud.
template <class T>
struct Extraction {
  Point3 centroid = Point3::Zero();
  PointCloud centered;
  Mat<T> psi, x, saliency, global;
  bool degenerate = false;
};

/// Centers the cloud, then computes X, S and the global descriptor in a single
/// pass that reuses Ψ/X for every head.
template <class T>
Extraction<T> extract(const ModelParams<T>& m, const PointCloud& cloud);

}  // namespace pcdesc::nn
