#include "pcdesc/pipeline.hpp"

#include "pcdesc/error.hpp"
#include "pcdesc/scene.hpp"

#include <cmath>
#include <random>

namespace pcdesc::pipeline {

Features compute_features(const nn::ModelParams<float>& m, const PointCloud& cloud, const EvalConfig& eval) {
  validate_cloud(cloud);
  require(cloud.size() >= static_cast<std::size_t>(eval.min_points), ErrorCode::InvalidArgument,
          "cloud has " + std::to_string(cloud.size()) + " points, fewer than eval.min_points = " +
              std::to_string(eval.min_points));
  Features f;
  f.ex = nn::extract(m, cloud);
  const std::vector<double> scores(f.ex.saliency.data(), f.ex.saliency.data() + f.ex.saliency.size());
  f.keypoints = kp::select_keypoints(scores, cloud, static_cast<std::size_t>(eval.keypoints), eval.nms_radius);
  return f;
}

nn::Mat<float> keypoint_descriptors(const Features& f) {
  nn::Mat<float> d(static_cast<Eigen::Index>(f.keypoints.size()), f.ex.x.cols());
  for (std::size_t i = 0; i < f.keypoints.size(); ++i)
    d.row(static_cast<Eigen::Index>(i)) = f.ex.x.row(static_cast<Eigen::Index>(f.keypoints[i].index));
  return d;
}

PairOutcome register_pair(const Features& a, const PointCloud& A, const Features& b, const PointCloud& B,
                          const EvalConfig& eval, std::uint64_t ransac_seed, const std::optional<RigidTransform>& truth) {
  PairOutcome out;
  const reg::MatchSet matches = reg::match_descriptors(keypoint_descriptors(a), keypoint_descriptors(b), eval.match_mode);
  out.matches = matches.size();
  const PointCloud ka(kp::keypoint_positions(a.keypoints, A)), kb(kp::keypoint_positions(b.keypoints, B));
  std::vector<double> weights;
  if (eval.saliency_refit)
    for (const auto& mt : matches) weights.push_back(a.keypoints[mt.a].score * b.keypoints[mt.b].score);
  out.result = reg::ransac_register(matches, ka, kb, eval.ransac(ransac_seed), weights);
  if (truth) {
    out.error = reg::rte_rre(out.result.transform, *truth);
    out.success = reg::registration_success(out.error->rte, out.error->rre, eval.max_rte, eval.max_rre);
    out.repeatability = kp::relative_repeatability(ka.points, kb.points, *truth, eval.repeat_radius);
  }
  return out;
}

PerturbedCloud perturb(const PointCloud& cloud, const Perturbation& p, double max_yaw, std::uint64_t seed) {
  require(p.downsample >= 1.0, ErrorCode::InvalidArgument, "downsampling factor must be >= 1");
  require(p.sigma >= 0.0, ErrorCode::InvalidArgument, "noise sigma must be >= 0");
  PerturbedCloud out;
  PointCloud base = cloud;
  if (p.downsample > 1.0) {
    const auto keep = static_cast<std::size_t>(std::llround(static_cast<double>(cloud.size()) / p.downsample));
    base = random_sample(cloud, std::max<std::size_t>(1, keep), derive_seed(seed, 0xd5)).cloud;
  }
  if (p.yaw_deg) {
    const SyntheticPair sp = synth_pair(base, 0.0, p.sigma, derive_seed(seed, 0x5e));
    out.truth = RigidTransform::from_yaw_deg(*p.yaw_deg);
    out.cloud = apply_transform(sp.cloud, out.truth);
  } else {
    SyntheticPair sp = synth_pair(base, max_yaw, p.sigma, derive_seed(seed, 0x5e));
    out.cloud = std::move(sp.cloud);
    out.truth = sp.transform;
  }
  return out;
}

RepeatabilityRow evaluate_repeatability(const nn::ModelParams<float>& m, const std::vector<PointCloud>& clouds,
                                        const Perturbation& p, const EvalConfig& eval) {
  RepeatabilityRow row;
  double sum = 0.0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const PerturbedCloud pc = perturb(clouds[i], p, eval.max_yaw, derive_seed(eval.seed, i + 1));
    const Features fa = compute_features(m, clouds[i], eval), fb = compute_features(m, pc.cloud, eval);
    sum += kp::relative_repeatability(fa.keypoints, clouds[i], fb.keypoints, pc.cloud, pc.truth, eval.repeat_radius);
    ++row.pairs;
  }
  row.mean = row.pairs ? sum / static_cast<double>(row.pairs) : 0.0;
  return row;
}

RegistrationRow evaluate_registration(const nn::ModelParams<float>& m, const std::vector<PointCloud>& clouds,
                                      const Perturbation& p, const EvalConfig& eval) {
  RegistrationRow row;
  double rte = 0.0, rre = 0.0, iters = 0.0, rep = 0.0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const PerturbedCloud pc = perturb(clouds[i], p, eval.max_yaw, derive_seed(eval.seed, i + 1));
    const Features fa = compute_features(m, clouds[i], eval), fb = compute_features(m, pc.cloud, eval);
    ++row.pairs;
    try {
      const PairOutcome o = register_pair(fa, clouds[i], fb, pc.cloud, eval, derive_seed(eval.seed, i + 1, 0x7a), pc.truth);
      iters += o.result.iterations;
      rep += *o.repeatability;
      if (*o.success) {
        ++row.successes;
        rte += o.error->rte;
        rre += o.error->rre;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientMatches && e.code() != ErrorCode::DegenerateSample) throw;
      ++row.failures_no_match;
      rep += kp::relative_repeatability(fa.keypoints, clouds[i], fb.keypoints, pc.cloud, pc.truth, eval.repeat_radius);
    }
  }
  if (row.pairs) {
    row.success_rate = 100.0 * static_cast<double>(row.successes) / static_cast<double>(row.pairs);
    row.mean_iterations = iters / static_cast<double>(row.pairs);
    row.mean_repeatability = rep / static_cast<double>(row.pairs);
  }
  if (row.successes) {
    row.mean_rte = rte / static_cast<double>(row.successes);
    row.mean_rre = rre / static_cast<double>(row.successes);
  }
  return row;
}

namespace {

Eigen::VectorXd global_of(const nn::ModelParams<float>& m, const PointCloud& cloud, const EvalConfig& eval) {
  validate_cloud(cloud);
  require(cloud.size() >= static_cast<std::size_t>(eval.min_points), ErrorCode::InvalidArgument,
          "cloud has fewer than eval.min_points points");
  const auto ex = nn::extract(m, cloud);
  Eigen::VectorXd g(ex.global.cols());
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = static_cast<double>(ex.global(0, i));
  return g;
}

}  // namespace

retrieval::DescriptorDatabase build_database(const nn::ModelParams<float>& m, const std::vector<Place>& places,
                                             const EvalConfig& eval) {
  retrieval::DescriptorDatabase db(m.arch.global_dim);
  for (const auto& p : places) db.add(p.id, p.position, global_of(m, p.cloud, eval));
  return db;
}

RetrievalRow evaluate_retrieval(const nn::ModelParams<float>& m, const std::vector<Place>& places,
                                const Perturbation& p, const EvalConfig& eval) {
  RetrievalRow row;
  const retrieval::DescriptorDatabase db = build_database(m, places, eval);
  std::vector<retrieval::Query> queries;
  for (std::size_t i = 0; i < places.size(); ++i) {
    const PerturbedCloud pc = perturb(places[i].cloud, p, eval.max_yaw, derive_seed(eval.seed, i + 1, 0x9e));
    queries.push_back({global_of(m, pc.cloud, eval), places[i].position});
  }
  row.queries = queries.size();
  row.database = db.size();
  const std::size_t max_n = std::min<std::size_t>(static_cast<std::size_t>(eval.recall_max_n), db.size());
  row.curve = retrieval::recall_curve(queries, db, max_n, eval.positive_radius);
  row.recall_at_1 = row.curve.front();
  row.recall_at_1pct = retrieval::recall_at_n(queries, db, retrieval::one_percent_cutoff(db.size()), eval.positive_radius);
  return row;
}

}  // namespace pcdesc::pipeline
