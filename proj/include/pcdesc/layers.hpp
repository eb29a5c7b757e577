#pragma once

#include "pcdesc/geometry.hpp"
#include "pcdesc/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace pcdesc::nn {

// ---------------------------------------------------------------------------
// Parameter blocks. Every block exposes visit(prefix, f) so optimizers and
// serializers can address each matrix by a unique dotted name.
// ---------------------------------------------------------------------------

/// Per-point affine map: out_i = W in_i + b. Also the dense FC layer.
template <class T>
struct Linear {
  Mat<T> weight;  // out × in
  Mat<T> bias;    // 1 × out

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(join_name(prefix, "weight"), weight);
    f(join_name(prefix, "bias"), bias);
  }
};

/// Kernel weights of a flex-convolution. In full mode theta is
/// C_out × (C_in·3) with column c'·3+d and theta_b is C_out × C_in.
/// In depthwise mode C_out = C_in, theta is C × 3 and theta_b is 1 × C.
template <class T>
struct FlexConv {
  Mat<T> theta;
  Mat<T> theta_b;
  int k = 9;
  int dilation = 1;
  bool depthwise = false;

  Eigen::Index in_dim() const { return depthwise ? theta.rows() : theta_b.cols(); }
  Eigen::Index out_dim() const { return depthwise ? theta.rows() : theta.rows(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(join_name(prefix, "theta"), theta);
    f(join_name(prefix, "theta_b"), theta_b);
  }
};

template <class T>
struct SqueezeExcite {
  Linear<T> reduce;  // C -> C/r
  Linear<T> expand;  // C/r -> C

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    reduce.visit(join_name(prefix, "reduce"), f);
    expand.visit(join_name(prefix, "expand"), f);
  }
};

// ---------------------------------------------------------------------------
// Initialization helpers
// ---------------------------------------------------------------------------

template <class T>
Linear<T> make_linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, double gain = 1.0);

template <class T>
FlexConv<T> make_flexconv(Eigen::Index in, Eigen::Index out, int k, int dilation, bool depthwise,
                          std::mt19937_64& rng, double gain = 1.0);

template <class T>
SqueezeExcite<T> make_se(Eigen::Index channels, int reduction, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Neighborhoods
// ---------------------------------------------------------------------------

/// Row-major N×k neighbor indices; column 0 is the point itself. With dilation
/// d the k·d nearest are ranked and positions 0, d, 2d, ... are kept.
struct NeighborTable {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> idx;

  std::uint32_t operator()(std::size_t l, std::size_t i) const { return idx[l * k + i]; }
};

NeighborTable build_neighbor_table(const std::vector<Point3>& points, int k, int dilation);

// ---------------------------------------------------------------------------
// Layer kernels. Backward functions accumulate (+=) into the gradient block
// and return the gradient with respect to their input.
// ---------------------------------------------------------------------------

template <class T>
Mat<T> conv1x1_forward(const Mat<T>& input, const Linear<T>& p);
template <class T>
Mat<T> conv1x1_backward(const Mat<T>& input, const Linear<T>& p, const Mat<T>& dout, Linear<T>& grad);

template <class T>
Mat<T> relu(const Mat<T>& x);
/// Uses the activation output y (y > 0 iff x > 0).
template <class T>
Mat<T> relu_backward(const Mat<T>& y, const Mat<T>& dout);

template <class T>
Mat<T> sigmoid(const Mat<T>& x);
template <class T>
Mat<T> sigmoid_backward(const Mat<T>& y, const Mat<T>& dout);

template <class T>
struct FlexConvCache {
  Mat<T> gathered;  // N × 4·C_in: per input channel, Σ rel_d·f and Σ f
};

/// out[l,c] = Σ_i Σ_c' (<θ[c,c'], p_l − p_{l_i}> + θ_b[c,c']) · f[l_i,c'].
template <class T>
Mat<T> flexconv_forward(const Mat<T>& positions, const Mat<T>& features, const FlexConv<T>& p,
                        const NeighborTable& nbrs, FlexConvCache<T>* cache = nullptr);
template <class T>
Mat<T> flexconv_backward(const Mat<T>& positions, const FlexConv<T>& p, const NeighborTable& nbrs,
                         const FlexConvCache<T>& cache, const Mat<T>& dout, FlexConv<T>& grad);

template <class T>
struct SECache {
  Mat<T> z;       // 1 × C squeezed descriptor
  Mat<T> hidden;  // 1 × C/r after ReLU
  Mat<T> gate;    // 1 × C after sigmoid
};

template <class T>
Mat<T> se_forward(const Mat<T>& U, const SqueezeExcite<T>& p, SECache<T>* cache = nullptr);
template <class T>
Mat<T> se_backward(const Mat<T>& U, const SqueezeExcite<T>& p, const SECache<T>& cache,
                   const Mat<T>& dout, SqueezeExcite<T>& grad);

/// Row-wise L2 normalization; zero rows map to zero and are counted in `zero_rows`.
template <class T>
Mat<T> l2_normalize_rows(const Mat<T>& x, Mat<T>* norms = nullptr, std::size_t* zero_rows = nullptr);
template <class T>
Mat<T> l2_normalize_rows_backward(const Mat<T>& y, const Mat<T>& norms, const Mat<T>& dout);

/// Softmax over all entries of an N×1 column.
template <class T>
Mat<T> softmax_column(const Mat<T>& logits);
template <class T>
Mat<T> softmax_column_backward(const Mat<T>& y, const Mat<T>& dout);

/// Row-wise softmax.
template <class T>
Mat<T> softmax_rows(const Mat<T>& logits);
template <class T>
Mat<T> softmax_rows_backward(const Mat<T>& y, const Mat<T>& dout);

template <class T>
Mat<T> gather_rows(const Mat<T>& x, const std::vector<std::uint32_t>& rows);
/// Adds each row of `src` into out.row(rows[i]).
template <class T>
void scatter_add_rows(const Mat<T>& src, const std::vector<std::uint32_t>& rows, Mat<T>& out);

template <class T>
Mat<T> positions_matrix(const std::vector<Point3>& points);

}  // namespace pcdesc::nn
