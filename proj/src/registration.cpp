#include "pcdesc/registration.hpp"

#include "pcdesc/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

namespace pcdesc::reg {

const char* to_string(MatchMode m) { return m == MatchMode::Mutual ? "mutual" : "nn"; }

MatchMode match_mode_from_string(const std::string& s) {
  if (s == "nn") return MatchMode::Nearest;
  if (s == "mutual") return MatchMode::Mutual;
  fail(ErrorCode::Configuration, "unknown match mode '" + s + "' (expected nn or mutual)");
}

namespace {

template <class T>
double row_distance(const nn::Mat<T>& a, Eigen::Index i, const nn::Mat<T>& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
    s += d * d;
  }
  return s;
}

}  // namespace

template <class T>
MatchSet match_descriptors(const nn::Mat<T>& a, const nn::Mat<T>& b, MatchMode mode) {
  require(a.rows() > 0 && b.rows() > 0, ErrorCode::InvalidArgument, "match_descriptors: empty descriptor set");
  nn::check_shape(a.cols() == b.cols(), "match_descriptors: descriptor dimensions differ");
  const Eigen::Index m = a.rows(), n = b.rows();
  Eigen::MatrixXd d2(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = row_distance(a, i, b, j);

  std::vector<Eigen::Index> best_b(static_cast<std::size_t>(m)), best_a(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < n; ++j)
      if (d2(i, j) < d2(i, arg)) arg = j;
    best_b[static_cast<std::size_t>(i)] = arg;
  }
  if (mode == MatchMode::Mutual) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::Index arg = 0;
      for (Eigen::Index i = 1; i < m; ++i)
        if (d2(i, j) < d2(arg, j)) arg = i;
      best_a[static_cast<std::size_t>(j)] = arg;
    }
  }
  MatchSet out;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = best_b[static_cast<std::size_t>(i)];
    if (mode == MatchMode::Mutual && best_a[static_cast<std::size_t>(j)] != i) continue;
    out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), std::sqrt(d2(i, j))});
  }
  return out;
}

template MatchSet match_descriptors<float>(const nn::Mat<float>&, const nn::Mat<float>&, MatchMode);
template MatchSet match_descriptors<double>(const nn::Mat<double>&, const nn::Mat<double>&, MatchMode);

double triangle_area(const Point3& p, const Point3& q, const Point3& r) { return 0.5 * (q - p).cross(r - p).norm(); }

RigidTransform rigid_solve(const std::vector<Point3>& a, const std::vector<Point3>& b,
                           const std::vector<double>& weights) {
  require(a.size() == b.size(), ErrorCode::InvalidArgument, "rigid_solve: point lists differ in length");
  require(weights.empty() || weights.size() == a.size(), ErrorCode::InvalidArgument,
          "rigid_solve: weight count differs from point count");
  if (a.size() < 3) fail(ErrorCode::DegenerateSample, "rigid_solve: need at least three pairs");
  const std::size_t n = a.size();
  double wsum = 0.0;
  Point3 ca = Point3::Zero(), cb = Point3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    require(std::isfinite(w) && w >= 0.0, ErrorCode::InvalidArgument, "rigid_solve: weights must be finite and >= 0");
    wsum += w;
    ca += w * a[i];
    cb += w * b[i];
  }
  if (!(wsum > 0.0)) fail(ErrorCode::DegenerateSample, "rigid_solve: all weights are zero");
  ca /= wsum;
  cb /= wsum;

  Eigen::Matrix3d H = Eigen::Matrix3d::Zero(), S = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const Point3 da = a[i] - ca, db = b[i] - cb;
    H += w * da * db.transpose();
    S += w * da * da.transpose();
  }
  // Collinear (or coincident) source points leave the rotation about the line free.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(S);
  const Eigen::Vector3d ev = es.eigenvalues();  // ascending
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300)) || ev(2) <= 0.0)
    fail(ErrorCode::DegenerateSample, "rigid_solve: collinear or coincident points");

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform T;
  T.rotation = V * fix * U.transpose();
  T.translation = cb - T.rotation * ca;
  return T;
}

void RansacConfig::validate() const {
  require(inlier_threshold > 0.0, ErrorCode::Configuration, "ransac inlier threshold must be > 0");
  require(max_iterations >= 1, ErrorCode::Configuration, "ransac max iterations must be >= 1");
  require(confidence > 0.0 && confidence < 1.0, ErrorCode::Configuration, "ransac confidence must lie in (0, 1)");
  require(min_sample_area >= 0.0, ErrorCode::Configuration, "ransac minimum sample area must be >= 0");
  require(threads >= 1 && chunk >= 1, ErrorCode::Configuration, "ransac threads and chunk must be >= 1");
}

double required_iterations(double w, double confidence) {
  if (w >= 1.0) return 1.0;
  const double good = w * w * w;
  if (good <= 0.0) return std::numeric_limits<double>::infinity();
  return std::log(1.0 - confidence) / std::log1p(-good);
}

namespace {

struct Hypothesis {
  RigidTransform T;
  std::size_t inliers = 0;
};

std::size_t count_inliers(const RigidTransform& T, const std::vector<Point3>& pa, const std::vector<Point3>& pb,
                          double thresh, std::vector<std::uint8_t>* mask = nullptr) {
  std::size_t c = 0;
  if (mask) mask->assign(pa.size(), 0);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if ((T.apply(pa[i]) - pb[i]).norm() < thresh) {
      ++c;
      if (mask) (*mask)[i] = 1;
    }
  }
  return c;
}

}  // namespace

RegistrationResult ransac_register(const MatchSet& matches, const PointCloud& A, const PointCloud& B,
                                   const RansacConfig& cfg, const std::vector<double>& refit_weights) {
  cfg.validate();
  if (matches.size() < 3) fail(ErrorCode::InsufficientMatches, "ransac_register: fewer than three matches");
  require(refit_weights.empty() || refit_weights.size() == matches.size(), ErrorCode::InvalidArgument,
          "ransac_register: refit weight count differs from match count");
  std::vector<Point3> pa, pb;
  pa.reserve(matches.size());
  pb.reserve(matches.size());
  for (const auto& m : matches) {
    require(m.a < A.size() && m.b < B.size(), ErrorCode::InvalidArgument, "ransac_register: match index out of range");
    pa.push_back(A[m.a]);
    pb.push_back(B[m.b]);
  }
  const std::size_t n = matches.size();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const long max_draws = 100L * cfg.max_iterations;
  long draws = 0;

  // Next non-degenerate minimal sample in seed order; false when exhausted.
  auto next_sample = [&](std::array<std::size_t, 3>& s) {
    while (draws < max_draws) {
      ++draws;
      s[0] = pick(rng);
      do s[1] = pick(rng); while (s[1] == s[0]);
      do s[2] = pick(rng); while (s[2] == s[0] || s[2] == s[1]);
      if (triangle_area(pa[s[0]], pa[s[1]], pa[s[2]]) < cfg.min_sample_area) continue;
      if (triangle_area(pb[s[0]], pb[s[1]], pb[s[2]]) < cfg.min_sample_area) continue;
      return true;
    }
    return false;
  };
  auto evaluate = [&](const std::array<std::size_t, 3>& s, Hypothesis& h) {
    try {
      h.T = rigid_solve({pa[s[0]], pa[s[1]], pa[s[2]]}, {pb[s[0]], pb[s[1]], pb[s[2]]});
      h.inliers = count_inliers(h.T, pa, pb, cfg.inlier_threshold);
    } catch (const Error&) {
      h.inliers = 0;
    }
  };

  Hypothesis best;
  bool have_best = false;
  int iterations = 0;
  bool converged = false;
  bool exhausted = false;
  const std::size_t batch = cfg.threads > 1 ? static_cast<std::size_t>(cfg.chunk) : 1;
  std::vector<std::array<std::size_t, 3>> samples;
  std::vector<Hypothesis> hyps;
  while (iterations < cfg.max_iterations && !converged && !exhausted) {
    samples.clear();
    const std::size_t want = std::min<std::size_t>(batch, static_cast<std::size_t>(cfg.max_iterations - iterations));
    std::array<std::size_t, 3> s{};
    while (samples.size() < want && next_sample(s)) samples.push_back(s);
    if (samples.size() < want) exhausted = true;
    hyps.assign(samples.size(), Hypothesis{});
    if (cfg.threads > 1 && samples.size() > 1) {
      std::vector<std::thread> pool;
      const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), samples.size());
      for (std::size_t t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
          for (std::size_t i = t; i < samples.size(); i += nt) evaluate(samples[i], hyps[i]);
        });
      for (auto& th : pool) th.join();
    } else {
      for (std::size_t i = 0; i < samples.size(); ++i) evaluate(samples[i], hyps[i]);
    }
    // Sequential scan reproduces the one-at-a-time stopping point exactly.
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      ++iterations;
      if (!have_best || hyps[i].inliers > best.inliers) {
        best = hyps[i];
        have_best = true;
      }
      const double w = static_cast<double>(best.inliers) / static_cast<double>(n);
      if (best.inliers >= 3 && static_cast<double>(iterations) >= required_iterations(w, cfg.confidence)) {
        converged = true;
        break;
      }
    }
  }
  if (!have_best) fail(ErrorCode::DegenerateSample, "ransac_register: every minimal sample is degenerate");

  RegistrationResult r;
  r.transform = best.T;
  r.iterations = iterations;
  r.converged = converged;
  r.inliers = count_inliers(best.T, pa, pb, cfg.inlier_threshold, &r.inlier_mask);
  if (r.inliers >= 3) {
    std::vector<Point3> ia, ib;
    std::vector<double> iw;
    for (std::size_t i = 0; i < n; ++i) {
      if (!r.inlier_mask[i]) continue;
      ia.push_back(pa[i]);
      ib.push_back(pb[i]);
      if (!refit_weights.empty()) iw.push_back(refit_weights[i]);
    }
    try {
      const RigidTransform refit = rigid_solve(ia, ib, iw);
      std::vector<std::uint8_t> mask;
      const std::size_t c = count_inliers(refit, pa, pb, cfg.inlier_threshold, &mask);
      if (c >= r.inliers) {
        r.transform = refit;
        r.inliers = c;
        r.inlier_mask = std::move(mask);
      }
    } catch (const Error&) {
      // keep the minimal-sample model
    }
  }
  return r;
}

PoseError rte_rre(const RigidTransform& estimate, const RigidTransform& truth) {
  const Eigen::Matrix3d RE = truth.rotation.transpose() * estimate.rotation;
  const Eigen::Vector3d axis(RE(2, 1) - RE(1, 2), RE(0, 2) - RE(2, 0), RE(1, 0) - RE(0, 1));
  const double angle = std::atan2(0.5 * axis.norm(), 0.5 * (RE.trace() - 1.0));
  return {(estimate.translation - truth.translation).norm(), angle * 180.0 / std::numbers::pi};
}

bool registration_success(double rte, double rre, double max_rte, double max_rre) {
  return rte < max_rte && rre < max_rre;
}

}  // namespace pcdesc::reg
