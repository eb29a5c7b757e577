#pragma once

#include "pcdesc/geometry.hpp"
#include "pcdesc/tensor.hpp"

#include <span>
#include <vector>

namespace pcdesc::loss {

using nn::Mat;

struct LossConfig {
  double mu = 0.5;       // negative margin of the description loss
  double eta_bal = 1.0;  // weight of the negative term
  double kappa = 0.6;    // minimum expected success rate per keypoint
  int asr_k = 5;         // ranks inspected by the success rate
  double lambda = 1.0;   // detector loss weight
  double alpha = 0.5;    // quadruplet margin, hardest negative
  double beta = 0.2;     // quadruplet margin, extra negative
  double gamma = 0.2;    // weak-supervision triplet margin

  /// Throws configuration error when a field is out of range.
  void validate() const;
};

/// D(i,j) = ‖a_i − b_j‖₂ for rows of a (m×D) and b (n×D).
template <class T>
Mat<T> feature_distance(const Mat<T>& a, const Mat<T>& b);

/// Gradients of the distance matrix; pairs at distance 0 contribute nothing.
template <class T>
void feature_distance_backward(const Mat<T>& a, const Mat<T>& b, const Mat<T>& D, const Mat<T>& dD,
                               Mat<T>& da, Mat<T>& db);

/// Positive distances averaged over positive pairs plus η·mean hinge
/// max(μ − D, 0) over negative pairs. Throws degenerate-batch when M has no
/// positive or no negative entry.
template <class T>
T desc_loss(const Mat<T>& D, const CorrespondenceMatrix& M, const LossConfig& cfg, Mat<T>* dD = nullptr);

/// Mean over ranks j = 1..k of c_j, where c_j = 1 once any correct candidate
/// appears among the j nearest (ascending distance, ties by lower index).
template <class T>
double avg_success_rate(std::span<const T> distances, std::span<const std::size_t> correct, int k);

/// Success rate of every row of D (anchors of P) or every column (anchors of
/// P') with correct candidates taken from M.
template <class T>
std::vector<double> avg_success_rate_rows(const Mat<T>& D, const CorrespondenceMatrix& M, int k);
template <class T>
std::vector<double> avg_success_rate_cols(const Mat<T>& D, const CorrespondenceMatrix& M, int k);

/// Per-point detector loss 1 − κ(1 − s) − s·ar and its derivative κ − ar.
template <class T>
struct DetTerms {
  Mat<T> loss;  // N × 1
  Mat<T> grad;  // N × 1
};

template <class T>
DetTerms<T> det_loss_terms(const Mat<T>& saliency, std::span<const double> asr, const LossConfig& cfg);

/// Mean of the per-point terms; dS receives (κ − ar_i)/N.
template <class T>
T det_loss(const Mat<T>& saliency, std::span<const double> asr, const LossConfig& cfg, Mat<T>* dS = nullptr);

inline double combined_local_loss(double desc, double det, double lambda) {
  require(lambda >= 0.0, ErrorCode::InvalidArgument, "lambda must be non-negative");
  return desc + lambda * det;
}

/// [α + δ_pos − min δ_neg]_+ + [β + δ_pos − min δ*]_+ from precomputed
/// distances; δ_pos is the best (smallest) positive distance.
double lazy_quadruplet_from_distances(std::span<const double> pos, std::span<const double> neg,
                                      std::span<const double> negstar, const LossConfig& cfg);

template <class T>
struct QuadrupletGrads {
  Mat<T> anchor;
  std::vector<Mat<T>> positives, negatives;
  Mat<T> negstar;
};

/// Descriptor-level lazy quadruplet loss; every descriptor is 1 × G.
template <class T>
T lazy_quadruplet_loss(const Mat<T>& anchor, const std::vector<Mat<T>>& positives,
                       const std::vector<Mat<T>>& negatives, const Mat<T>& negstar, const LossConfig& cfg,
                       QuadrupletGrads<T>* grads = nullptr);

template <class T>
struct TripletGrads {
  Mat<T> anchor, positive, negative;
};

/// Σ_n [min_i ‖x_n − pos_i‖ − min_j ‖x_n − neg_j‖ + γ]_+ over anchor rows.
template <class T>
T weak_triplet_loss(const Mat<T>& anchor, const Mat<T>& positive, const Mat<T>& negative, double gamma,
                    TripletGrads<T>* grads = nullptr);

}  // namespace pcdesc::loss
