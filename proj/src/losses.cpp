#include "pcdesc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pcdesc::loss {

void LossConfig::validate() const {
  require(mu > 0.0, ErrorCode::Configuration, "loss.mu must be positive");
  require(eta_bal >= 0.0, ErrorCode::Configuration, "loss.eta_bal must be non-negative");
  require(kappa >= 0.0 && kappa <= 1.0, ErrorCode::Configuration, "loss.kappa must lie in [0, 1]");
  require(asr_k >= 1, ErrorCode::Configuration, "loss.asr_k must be >= 1");
  require(lambda >= 0.0, ErrorCode::Configuration, "loss.lambda must be non-negative");
  require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, ErrorCode::Configuration,
          "loss margins must be non-negative");
}

template <class T>
Mat<T> feature_distance(const Mat<T>& a, const Mat<T>& b) {
  nn::check_shape(a.cols() == b.cols(), "feature_distance descriptor dimension");
  const Eigen::Matrix<T, Eigen::Dynamic, 1> na = a.rowwise().squaredNorm();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> nb = b.rowwise().squaredNorm().transpose();
  Mat<T> d = a * b.transpose();
  d *= T(-2);
  d.colwise() += na;
  d.rowwise() += nb;
  return d.cwiseMax(T(0)).cwiseSqrt();
}

template <class T>
void feature_distance_backward(const Mat<T>& a, const Mat<T>& b, const Mat<T>& D, const Mat<T>& dD,
                               Mat<T>& da, Mat<T>& db) {
  // W = dD / D with zero-distance pairs dropped (the norm has no gradient there)
  const T eps = std::numeric_limits<T>::epsilon();
  Mat<T> w = (D.array() > eps).select(dD.array() / D.array().max(eps), T(0)).matrix();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = w.rowwise().sum();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> cs = w.colwise().sum();
  da = a;
  for (Eigen::Index i = 0; i < a.rows(); ++i) da.row(i) *= rs(i);
  da.noalias() -= w * b;
  db = b;
  for (Eigen::Index j = 0; j < b.rows(); ++j) db.row(j) *= cs(j);
  db.noalias() -= w.transpose() * a;
}

template <class T>
T desc_loss(const Mat<T>& D, const CorrespondenceMatrix& M, const LossConfig& cfg, Mat<T>* dD) {
  nn::check_shape(D.rows() == M.rows() && D.cols() == M.cols(), "desc_loss D vs M");
  const std::size_t total = static_cast<std::size_t>(D.size());
  const std::size_t npos = M.positives();
  require(npos > 0 && npos < total, ErrorCode::DegenerateBatch,
          "desc_loss needs at least one positive and one negative pair");
  const T inv_pos = T(1) / static_cast<T>(npos);
  const T inv_neg = static_cast<T>(cfg.eta_bal) / static_cast<T>(total - npos);
  const T mu = static_cast<T>(cfg.mu);
  T pos_sum = 0, neg_sum = 0;
  if (dD) dD->setZero(D.rows(), D.cols());
  for (Eigen::Index i = 0; i < D.rows(); ++i) {
    for (Eigen::Index j = 0; j < D.cols(); ++j) {
      const T d = D(i, j);
      if (M(i, j)) {
        pos_sum += d;
        if (dD) (*dD)(i, j) = inv_pos;
      } else if (d < mu) {
        neg_sum += mu - d;
        if (dD) (*dD)(i, j) = -inv_neg;
      }
    }
  }
  return pos_sum * inv_pos + neg_sum * inv_neg;
}

namespace {

template <class T, class IsCorrect>
double success_rate_impl(std::size_t n, const T* dist, std::ptrdiff_t stride, IsCorrect&& is_correct, int k) {
  require(k >= 1 && static_cast<std::size_t>(k) <= n, ErrorCode::InvalidArgument,
          "avg_success_rate: k must lie in [1, N']");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    const T da = dist[static_cast<std::ptrdiff_t>(a) * stride];
    const T db = dist[static_cast<std::ptrdiff_t>(b) * stride];
    return da < db || (da == db && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + k, order.end(), less);
  for (int j = 0; j < k; ++j) {
    if (is_correct(order[static_cast<std::size_t>(j)])) {
      // ranks j+1 .. k all succeed
      return static_cast<double>(k - j) / static_cast<double>(k);
    }
  }
  return 0.0;
}

}  // namespace

template <class T>
double avg_success_rate(std::span<const T> distances, std::span<const std::size_t> correct, int k) {
  if (correct.empty()) {
    require(k >= 1 && static_cast<std::size_t>(k) <= distances.size(), ErrorCode::InvalidArgument,
            "avg_success_rate: k must lie in [1, N']");
    return 0.0;
  }
  std::vector<bool> mask(distances.size(), false);
  for (auto c : correct) {
    require(c < distances.size(), ErrorCode::InvalidArgument, "avg_success_rate: correct index out of range");
    mask[c] = true;
  }
  return success_rate_impl<T>(distances.size(), distances.data(), 1, [&](std::size_t j) { return mask[j]; }, k);
}

template <class T>
std::vector<double> avg_success_rate_rows(const Mat<T>& D, const CorrespondenceMatrix& M, int k) {
  nn::check_shape(D.rows() == M.rows() && D.cols() == M.cols(), "success rate D vs M");
  std::vector<double> out(static_cast<std::size_t>(D.rows()));
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    out[static_cast<std::size_t>(i)] = success_rate_impl<T>(
        static_cast<std::size_t>(D.cols()), D.row(i).data(), 1,
        [&](std::size_t j) { return M(i, static_cast<Eigen::Index>(j)) != 0; }, k);
  return out;
}

template <class T>
std::vector<double> avg_success_rate_cols(const Mat<T>& D, const CorrespondenceMatrix& M, int k) {
  nn::check_shape(D.rows() == M.rows() && D.cols() == M.cols(), "success rate D vs M");
  std::vector<double> out(static_cast<std::size_t>(D.cols()));
  for (Eigen::Index j = 0; j < D.cols(); ++j)
    out[static_cast<std::size_t>(j)] = success_rate_impl<T>(
        static_cast<std::size_t>(D.rows()), D.data() + j, D.cols(),
        [&](std::size_t i) { return M(static_cast<Eigen::Index>(i), j) != 0; }, k);
  return out;
}

template <class T>
DetTerms<T> det_loss_terms(const Mat<T>& saliency, std::span<const double> asr, const LossConfig& cfg) {
  nn::check_shape(saliency.cols() == 1 && static_cast<std::size_t>(saliency.rows()) == asr.size(),
                  "det_loss saliency vs success rates");
  DetTerms<T> t;
  t.loss.resize(saliency.rows(), 1);
  t.grad.resize(saliency.rows(), 1);
  const T kappa = static_cast<T>(cfg.kappa);
  for (Eigen::Index i = 0; i < saliency.rows(); ++i) {
    const T s = saliency(i, 0);
    const T ar = static_cast<T>(asr[static_cast<std::size_t>(i)]);
    t.loss(i, 0) = T(1) - (kappa * (T(1) - s) + s * ar);
    t.grad(i, 0) = kappa - ar;
  }
  return t;
}

template <class T>
T det_loss(const Mat<T>& saliency, std::span<const double> asr, const LossConfig& cfg, Mat<T>* dS) {
  const DetTerms<T> t = det_loss_terms<T>(saliency, asr, cfg);
  const T inv_n = T(1) / static_cast<T>(saliency.rows());
  if (dS) *dS = t.grad * inv_n;
  return t.loss.sum() * inv_n;
}

double lazy_quadruplet_from_distances(std::span<const double> pos, std::span<const double> neg,
                                      std::span<const double> negstar, const LossConfig& cfg) {
  require(!pos.empty() && !neg.empty() && !negstar.empty(), ErrorCode::DegenerateBatch,
          "lazy quadruplet loss needs positives, negatives and neg* distances");
  const double dpos = *std::min_element(pos.begin(), pos.end());
  const double dneg = *std::min_element(neg.begin(), neg.end());
  const double dstar = *std::min_element(negstar.begin(), negstar.end());
  return std::max(cfg.alpha + dpos - dneg, 0.0) + std::max(cfg.beta + dpos - dstar, 0.0);
}

namespace {

template <class T>
T row_distance(const Mat<T>& a, const Mat<T>& b) {
  return (a - b).norm();
}

/// d‖a − b‖/da; zero when the points coincide.
template <class T>
Mat<T> unit_diff(const Mat<T>& a, const Mat<T>& b) {
  const Mat<T> d = a - b;
  const T n = d.norm();
  return n > T(0) ? Mat<T>(d / n) : Mat<T>(Mat<T>::Zero(a.rows(), a.cols()));
}

template <class T>
std::size_t argmin_distance(const Mat<T>& from, const std::vector<Mat<T>>& set, T& best) {
  std::size_t arg = 0;
  best = std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const T d = row_distance(from, set[i]);
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  return arg;
}

}  // namespace

template <class T>
T lazy_quadruplet_loss(const Mat<T>& anchor, const std::vector<Mat<T>>& positives,
                       const std::vector<Mat<T>>& negatives, const Mat<T>& negstar, const LossConfig& cfg,
                       QuadrupletGrads<T>* grads) {
  require(!positives.empty() && !negatives.empty(), ErrorCode::DegenerateBatch,
          "lazy quadruplet loss needs at least one positive and one negative");
  T dpos, dneg;
  const std::size_t ip = argmin_distance(anchor, positives, dpos);
  const std::size_t in = argmin_distance(anchor, negatives, dneg);
  T dstar;
  const std::size_t is = argmin_distance(negstar, negatives, dstar);
  const T t1 = static_cast<T>(cfg.alpha) + dpos - dneg;
  const T t2 = static_cast<T>(cfg.beta) + dpos - dstar;
  if (grads) {
    grads->anchor = Mat<T>::Zero(anchor.rows(), anchor.cols());
    grads->negstar = Mat<T>::Zero(negstar.rows(), negstar.cols());
    grads->positives.assign(positives.size(), Mat<T>::Zero(anchor.rows(), anchor.cols()));
    grads->negatives.assign(negatives.size(), Mat<T>::Zero(anchor.rows(), anchor.cols()));
    const Mat<T> gpos = unit_diff(anchor, positives[ip]);
    if (t1 > T(0)) {
      grads->anchor += gpos;
      grads->positives[ip] -= gpos;
      const Mat<T> gneg = unit_diff(anchor, negatives[in]);
      grads->anchor -= gneg;
      grads->negatives[in] += gneg;
    }
    if (t2 > T(0)) {
      grads->anchor += gpos;
      grads->positives[ip] -= gpos;
      const Mat<T> gstar = unit_diff(negstar, negatives[is]);
      grads->negstar -= gstar;
      grads->negatives[is] += gstar;
    }
  }
  return std::max(t1, T(0)) + std::max(t2, T(0));
}

template <class T>
T weak_triplet_loss(const Mat<T>& anchor, const Mat<T>& positive, const Mat<T>& negative, double gamma,
                    TripletGrads<T>* grads) {
  require(anchor.rows() > 0 && positive.rows() > 0 && negative.rows() > 0, ErrorCode::InvalidArgument,
          "weak_triplet_loss: descriptor sets must be non-empty");
  nn::check_shape(anchor.cols() == positive.cols() && anchor.cols() == negative.cols(),
                  "weak_triplet_loss descriptor dimension");
  if (grads) {
    grads->anchor = Mat<T>::Zero(anchor.rows(), anchor.cols());
    grads->positive = Mat<T>::Zero(positive.rows(), positive.cols());
    grads->negative = Mat<T>::Zero(negative.rows(), negative.cols());
  }
  T total = 0;
  for (Eigen::Index n = 0; n < anchor.rows(); ++n) {
    const Mat<T> x = anchor.row(n);
    Eigen::Index ip = 0, in = 0;
    T dp = std::numeric_limits<T>::infinity(), dn = std::numeric_limits<T>::infinity();
    for (Eigen::Index i = 0; i < positive.rows(); ++i) {
      const T d = (x - positive.row(i)).norm();
      if (d < dp) dp = d, ip = i;
    }
    for (Eigen::Index j = 0; j < negative.rows(); ++j) {
      const T d = (x - negative.row(j)).norm();
      if (d < dn) dn = d, in = j;
    }
    const T term = dp - dn + static_cast<T>(gamma);
    if (term <= T(0)) continue;
    total += term;
    if (grads) {
      const Mat<T> gp = unit_diff<T>(x, positive.row(ip));
      const Mat<T> gn = unit_diff<T>(x, negative.row(in));
      grads->anchor.row(n) += gp - gn;
      grads->positive.row(ip) -= gp;
      grads->negative.row(in) += gn;
    }
  }
  return total;
}

#define PCDESC_INSTANTIATE_LOSSES(T)                                                                    \
  template Mat<T> feature_distance<T>(const Mat<T>&, const Mat<T>&);                                  \
  template void feature_distance_backward<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&,             \
                                             const Mat<T>&, Mat<T>&, Mat<T>&);                        \
  template T desc_loss<T>(const Mat<T>&, const CorrespondenceMatrix&, const LossConfig&, Mat<T>*);    \
  template double avg_success_rate<T>(std::span<const T>, std::span<const std::size_t>, int);         \
  template std::vector<double> avg_success_rate_rows<T>(const Mat<T>&, const CorrespondenceMatrix&,   \
                                                        int);                                         \
  template std::vector<double> avg_success_rate_cols<T>(const Mat<T>&, const CorrespondenceMatrix&,   \
                                                        int);                                         \
  template DetTerms<T> det_loss_terms<T>(const Mat<T>&, std::span<const double>, const LossConfig&);  \
  template T det_loss<T>(const Mat<T>&, std::span<const double>, const LossConfig&, Mat<T>*);         \
  template T lazy_quadruplet_loss<T>(const Mat<T>&, const std::vector<Mat<T>>&,                       \
                                     const std::vector<Mat<T>>&, const Mat<T>&, const LossConfig&,    \
                                     QuadrupletGrads<T>*);                                            \
  template T weak_triplet_loss<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&, double,                \
                                  TripletGrads<T>*);

PCDESC_INSTANTIATE_LOSSES(float)
PCDESC_INSTANTIATE_LOSSES(double)

}  // namespace pcdesc::loss
