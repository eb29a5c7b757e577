#include "pcdesc/layers.hpp"

#include "pcdesc/neighbor_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pcdesc::nn {

namespace {

template <class T>
void fill_normal(Mat<T>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

}  // namespace

template <class T>
Linear<T> make_linear(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng, double gain) {
  Linear<T> l;
  l.weight.resize(out, in);
  fill_normal(l.weight, gain * std::sqrt(2.0 / static_cast<double>(in)), rng);
  l.bias = Mat<T>::Zero(1, out);
  return l;
}

template <class T>
FlexConv<T> make_flexconv(Eigen::Index in, Eigen::Index out, int k, int dilation, bool depthwise,
                          std::mt19937_64& rng, double gain) {
  FlexConv<T> f;
  f.k = k;
  f.dilation = dilation;
  f.depthwise = depthwise;
  const double fan_in = static_cast<double>(k) * static_cast<double>(depthwise ? 1 : in);
  const double stddev = gain * std::sqrt(2.0 / fan_in);
  if (depthwise) {
    require(in == out, ErrorCode::InvalidArgument, "depthwise FlexConv requires C_in == C_out");
    f.theta.resize(in, 3);
    f.theta_b.resize(1, in);
  } else {
    f.theta.resize(out, 3 * in);
    f.theta_b.resize(out, in);
  }
  fill_normal(f.theta, stddev, rng);
  fill_normal(f.theta_b, stddev, rng);
  return f;
}

template <class T>
SqueezeExcite<T> make_se(Eigen::Index channels, int reduction, std::mt19937_64& rng) {
  require(reduction >= 1 && channels % reduction == 0, ErrorCode::InvalidArgument,
          "SE reduction ratio must divide the channel count");
  SqueezeExcite<T> se;
  se.reduce = make_linear<T>(channels, channels / reduction, rng);
  se.expand = make_linear<T>(channels / reduction, channels, rng, 0.5);
  return se;
}

NeighborTable build_neighbor_table(const std::vector<Point3>& points, int k, int dilation) {
  require(k >= 1 && dilation >= 1, ErrorCode::InvalidArgument, "neighborhood needs k >= 1, d >= 1");
  const std::size_t span = static_cast<std::size_t>(k - 1) * static_cast<std::size_t>(dilation) + 1;
  require(span <= points.size(), ErrorCode::InvalidArgument,
          "neighborhood (k-1)*d+1 exceeds the number of points");
  const NeighborIndex index(points);
  NeighborTable t;
  t.rows = points.size();
  t.k = static_cast<std::size_t>(k);
  t.idx.resize(t.rows * t.k);
  for (std::size_t l = 0; l < t.rows; ++l) {
    auto nb = index.knn(points[l], span);
    // the query point is always its own nearest neighbor, even with duplicates
    for (std::size_t r = 1; r < nb.size() && nb.front().index != l; ++r) {
      if (nb[r].index == l) std::swap(nb[0], nb[r]);
    }
    nb.front().index = l;
    for (std::size_t i = 0; i < t.k; ++i)
      t.idx[l * t.k + i] = static_cast<std::uint32_t>(nb[i * static_cast<std::size_t>(dilation)].index);
  }
  return t;
}

template <class T>
Mat<T> conv1x1_forward(const Mat<T>& input, const Linear<T>& p) {
  check_shape(input.cols() == p.in_dim(), "conv1x1 input channels");
  check_shape(p.bias.rows() == 1 && p.bias.cols() == p.out_dim(), "conv1x1 bias");
  Mat<T> out = input * p.weight.transpose();
  out.rowwise() += p.bias.row(0);
  return out;
}

template <class T>
Mat<T> conv1x1_backward(const Mat<T>& input, const Linear<T>& p, const Mat<T>& dout, Linear<T>& grad) {
  check_shape(dout.rows() == input.rows() && dout.cols() == p.out_dim(), "conv1x1 upstream gradient");
  grad.weight.noalias() += dout.transpose() * input;
  grad.bias += dout.colwise().sum();
  return dout * p.weight;
}

template <class T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

template <class T>
Mat<T> relu_backward(const Mat<T>& y, const Mat<T>& dout) {
  return (y.array() > T(0)).select(dout, T(0));
}

template <class T>
Mat<T> sigmoid(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    // split by sign so neither branch overflows
    const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    // keep the open interval (0, 1) when the logit saturates the type
    y.data()[i] = std::clamp(s, std::numeric_limits<T>::min(), T(1) - std::numeric_limits<T>::epsilon() / T(2));
  }
  return y;
}

template <class T>
Mat<T> sigmoid_backward(const Mat<T>& y, const Mat<T>& dout) {
  return (dout.array() * y.array() * (T(1) - y.array())).matrix();
}

template <class T>
Mat<T> flexconv_forward(const Mat<T>& positions, const Mat<T>& features, const FlexConv<T>& p,
                        const NeighborTable& nbrs, FlexConvCache<T>* cache) {
  const Eigen::Index n = features.rows();
  const Eigen::Index cin = features.cols();
  check_shape(positions.rows() == n && positions.cols() == 3, "flexconv positions");
  check_shape(nbrs.rows == static_cast<std::size_t>(n) && nbrs.k == static_cast<std::size_t>(p.k),
              "flexconv neighbor table");
  check_shape(cin == p.in_dim(), "flexconv input channels");

  Mat<T> gathered = Mat<T>::Zero(n, 4 * cin);
  for (Eigen::Index l = 0; l < n; ++l) {
    T* g = gathered.row(l).data();
    for (std::size_t i = 0; i < nbrs.k; ++i) {
      const auto j = static_cast<Eigen::Index>(nbrs(static_cast<std::size_t>(l), i));
      const T r0 = positions(l, 0) - positions(j, 0);
      const T r1 = positions(l, 1) - positions(j, 1);
      const T r2 = positions(l, 2) - positions(j, 2);
      const T* f = features.row(j).data();
      for (Eigen::Index c = 0; c < cin; ++c) {
        g[4 * c + 0] += r0 * f[c];
        g[4 * c + 1] += r1 * f[c];
        g[4 * c + 2] += r2 * f[c];
        g[4 * c + 3] += f[c];
      }
    }
  }

  Mat<T> out;
  if (p.depthwise) {
    out.resize(n, cin);
    for (Eigen::Index l = 0; l < n; ++l)
      for (Eigen::Index c = 0; c < cin; ++c)
        out(l, c) = p.theta(c, 0) * gathered(l, 4 * c) + p.theta(c, 1) * gathered(l, 4 * c + 1) +
                    p.theta(c, 2) * gathered(l, 4 * c + 2) + p.theta_b(0, c) * gathered(l, 4 * c + 3);
  } else {
    const Eigen::Index cout = p.theta.rows();
    Mat<T> w(cout, 4 * cin);
    for (Eigen::Index c = 0; c < cin; ++c) {
      w.col(4 * c + 0) = p.theta.col(3 * c + 0);
      w.col(4 * c + 1) = p.theta.col(3 * c + 1);
      w.col(4 * c + 2) = p.theta.col(3 * c + 2);
      w.col(4 * c + 3) = p.theta_b.col(c);
    }
    out.noalias() = gathered * w.transpose();
  }
  if (cache) cache->gathered = std::move(gathered);
  return out;
}

template <class T>
Mat<T> flexconv_backward(const Mat<T>& positions, const FlexConv<T>& p, const NeighborTable& nbrs,
                         const FlexConvCache<T>& cache, const Mat<T>& dout, FlexConv<T>& grad) {
  const Mat<T>& gathered = cache.gathered;
  const Eigen::Index n = gathered.rows();
  const Eigen::Index cin = gathered.cols() / 4;
  check_shape(dout.rows() == n, "flexconv upstream gradient");

  Mat<T> dgathered(n, 4 * cin);
  if (p.depthwise) {
    for (Eigen::Index l = 0; l < n; ++l)
      for (Eigen::Index c = 0; c < cin; ++c) {
        const T d = dout(l, c);
        for (int k = 0; k < 3; ++k) {
          grad.theta(c, k) += d * gathered(l, 4 * c + k);
          dgathered(l, 4 * c + k) = d * p.theta(c, k);
        }
        grad.theta_b(0, c) += d * gathered(l, 4 * c + 3);
        dgathered(l, 4 * c + 3) = d * p.theta_b(0, c);
      }
  } else {
    const Eigen::Index cout = p.theta.rows();
    Mat<T> w(cout, 4 * cin);
    for (Eigen::Index c = 0; c < cin; ++c) {
      w.col(4 * c + 0) = p.theta.col(3 * c + 0);
      w.col(4 * c + 1) = p.theta.col(3 * c + 1);
      w.col(4 * c + 2) = p.theta.col(3 * c + 2);
      w.col(4 * c + 3) = p.theta_b.col(c);
    }
    const Mat<T> dw = dout.transpose() * gathered;
    for (Eigen::Index c = 0; c < cin; ++c) {
      grad.theta.col(3 * c + 0) += dw.col(4 * c + 0);
      grad.theta.col(3 * c + 1) += dw.col(4 * c + 1);
      grad.theta.col(3 * c + 2) += dw.col(4 * c + 2);
      grad.theta_b.col(c) += dw.col(4 * c + 3);
    }
    dgathered.noalias() = dout * w;
  }

  Mat<T> dfeatures = Mat<T>::Zero(n, cin);
  for (Eigen::Index l = 0; l < n; ++l) {
    const T* dg = dgathered.row(l).data();
    for (std::size_t i = 0; i < nbrs.k; ++i) {
      const auto j = static_cast<Eigen::Index>(nbrs(static_cast<std::size_t>(l), i));
      const T r0 = positions(l, 0) - positions(j, 0);
      const T r1 = positions(l, 1) - positions(j, 1);
      const T r2 = positions(l, 2) - positions(j, 2);
      T* df = dfeatures.row(j).data();
      for (Eigen::Index c = 0; c < cin; ++c)
        df[c] += r0 * dg[4 * c] + r1 * dg[4 * c + 1] + r2 * dg[4 * c + 2] + dg[4 * c + 3];
    }
  }
  return dfeatures;
}

template <class T>
Mat<T> se_forward(const Mat<T>& U, const SqueezeExcite<T>& p, SECache<T>* cache) {
  check_shape(U.cols() == p.reduce.in_dim() && U.cols() == p.expand.out_dim(), "SE channels");
  check_shape(U.rows() >= 1, "SE needs at least one point");
  Mat<T> z = U.colwise().mean();
  Mat<T> hidden = relu<T>(conv1x1_forward<T>(z, p.reduce));
  Mat<T> gate = sigmoid<T>(conv1x1_forward<T>(hidden, p.expand));
  Mat<T> out = U;
  for (Eigen::Index l = 0; l < out.rows(); ++l) out.row(l).array() *= gate.row(0).array();
  if (cache) {
    cache->z = std::move(z);
    cache->hidden = std::move(hidden);
    cache->gate = std::move(gate);
  }
  return out;
}

template <class T>
Mat<T> se_backward(const Mat<T>& U, const SqueezeExcite<T>& p, const SECache<T>& cache,
                   const Mat<T>& dout, SqueezeExcite<T>& grad) {
  check_shape(dout.rows() == U.rows() && dout.cols() == U.cols(), "SE upstream gradient");
  const Mat<T> dgate = (dout.array() * U.array()).matrix().colwise().sum();
  const Mat<T> dpre2 = sigmoid_backward<T>(cache.gate, dgate);
  const Mat<T> dhidden = conv1x1_backward<T>(cache.hidden, p.expand, dpre2, grad.expand);
  const Mat<T> dpre1 = relu_backward<T>(cache.hidden, dhidden);
  const Mat<T> dz = conv1x1_backward<T>(cache.z, p.reduce, dpre1, grad.reduce);
  Mat<T> dU = dout;
  const T inv_n = T(1) / static_cast<T>(U.rows());
  for (Eigen::Index l = 0; l < dU.rows(); ++l)
    dU.row(l) = (dU.row(l).array() * cache.gate.row(0).array() + dz.row(0).array() * inv_n).matrix();
  return dU;
}

template <class T>
Mat<T> l2_normalize_rows(const Mat<T>& x, Mat<T>* norms, std::size_t* zero_rows) {
  Mat<T> y = x;
  Mat<T> nrm(x.rows(), 1);
  std::size_t zeros = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T n = x.row(i).norm();
    nrm(i, 0) = n;
    if (n > T(0)) {
      y.row(i) /= n;
    } else {
      y.row(i).setZero();
      ++zeros;
    }
  }
  if (norms) *norms = std::move(nrm);
  if (zero_rows) *zero_rows = zeros;
  return y;
}

template <class T>
Mat<T> l2_normalize_rows_backward(const Mat<T>& y, const Mat<T>& norms, const Mat<T>& dout) {
  Mat<T> dx(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const T n = norms(i, 0);
    if (n > T(0)) {
      const T proj = y.row(i).dot(dout.row(i));
      dx.row(i) = (dout.row(i) - proj * y.row(i)) / n;
    } else {
      dx.row(i).setZero();
    }
  }
  return dx;
}

template <class T>
Mat<T> softmax_column(const Mat<T>& logits) {
  check_shape(logits.cols() == 1 && logits.rows() >= 1, "softmax over points expects N×1");
  const T mx = logits.maxCoeff();
  Mat<T> y = (logits.array() - mx).exp().matrix();
  y /= y.sum();
  return y;
}

template <class T>
Mat<T> softmax_column_backward(const Mat<T>& y, const Mat<T>& dout) {
  const T dot = (y.array() * dout.array()).sum();
  return (y.array() * (dout.array() - dot)).matrix();
}

template <class T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  Mat<T> y(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    y.row(i) = (logits.row(i).array() - mx).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <class T>
Mat<T> softmax_rows_backward(const Mat<T>& y, const Mat<T>& dout) {
  Mat<T> dx(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const T dot = y.row(i).dot(dout.row(i));
    dx.row(i) = (y.row(i).array() * (dout.row(i).array() - dot)).matrix();
  }
  return dx;
}

template <class T>
Mat<T> gather_rows(const Mat<T>& x, const std::vector<std::uint32_t>& rows) {
  Mat<T> out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

template <class T>
void scatter_add_rows(const Mat<T>& src, const std::vector<std::uint32_t>& rows, Mat<T>& out) {
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) += src.row(static_cast<Eigen::Index>(i));
}

template <class T>
Mat<T> positions_matrix(const std::vector<Point3>& points) {
  Mat<T> m(static_cast<Eigen::Index>(points.size()), 3);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int d = 0; d < 3; ++d) m(static_cast<Eigen::Index>(i), d) = static_cast<T>(points[i][d]);
  return m;
}

#define PCDESC_INSTANTIATE_LAYERS(T)                                                                  \
  template Linear<T> make_linear<T>(Eigen::Index, Eigen::Index, std::mt19937_64&, double);          \
  template FlexConv<T> make_flexconv<T>(Eigen::Index, Eigen::Index, int, int, bool,                 \
                                        std::mt19937_64&, double);                                  \
  template SqueezeExcite<T> make_se<T>(Eigen::Index, int, std::mt19937_64&);                        \
  template Mat<T> conv1x1_forward<T>(const Mat<T>&, const Linear<T>&);                              \
  template Mat<T> conv1x1_backward<T>(const Mat<T>&, const Linear<T>&, const Mat<T>&, Linear<T>&);  \
  template Mat<T> relu<T>(const Mat<T>&);                                                           \
  template Mat<T> relu_backward<T>(const Mat<T>&, const Mat<T>&);                                   \
  template Mat<T> sigmoid<T>(const Mat<T>&);                                                        \
  template Mat<T> sigmoid_backward<T>(const Mat<T>&, const Mat<T>&);                                \
  template Mat<T> flexconv_forward<T>(const Mat<T>&, const Mat<T>&, const FlexConv<T>&,             \
                                      const NeighborTable&, FlexConvCache<T>*);                     \
  template Mat<T> flexconv_backward<T>(const Mat<T>&, const FlexConv<T>&, const NeighborTable&,     \
                                       const FlexConvCache<T>&, const Mat<T>&, FlexConv<T>&);       \
  template Mat<T> se_forward<T>(const Mat<T>&, const SqueezeExcite<T>&, SECache<T>*);               \
  template Mat<T> se_backward<T>(const Mat<T>&, const SqueezeExcite<T>&, const SECache<T>&,         \
                                 const Mat<T>&, SqueezeExcite<T>&);                                 \
  template Mat<T> l2_normalize_rows<T>(const Mat<T>&, Mat<T>*, std::size_t*);                       \
  template Mat<T> l2_normalize_rows_backward<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&);       \
  template Mat<T> softmax_column<T>(const Mat<T>&);                                                 \
  template Mat<T> softmax_column_backward<T>(const Mat<T>&, const Mat<T>&);                         \
  template Mat<T> softmax_rows<T>(const Mat<T>&);                                                   \
  template Mat<T> softmax_rows_backward<T>(const Mat<T>&, const Mat<T>&);                           \
  template Mat<T> gather_rows<T>(const Mat<T>&, const std::vector<std::uint32_t>&);                 \
  template void scatter_add_rows<T>(const Mat<T>&, const std::vector<std::uint32_t>&, Mat<T>&);     \
  template Mat<T> positions_matrix<T>(const std::vector<Point3>&);

PCDESC_INSTANTIATE_LAYERS(float)
PCDESC_INSTANTIATE_LAYERS(double)

}  // namespace pcdesc::nn
