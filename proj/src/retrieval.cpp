#include "pcdesc/retrieval.hpp"

#include "pcdesc/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pcdesc::retrieval {

void DescriptorDatabase::add(std::string id, const Eigen::Vector3d& position, const Eigen::VectorXd& descriptor,
                             double norm_tol) {
  require(descriptor.size() > 0, ErrorCode::InvalidArgument, "database: empty descriptor");
  if (dim_ == 0) dim_ = static_cast<int>(descriptor.size());
  require(descriptor.size() == dim_, ErrorCode::InvalidArgument, "database: descriptor dimension mismatch");
  require(descriptor.allFinite() && position.allFinite(), ErrorCode::InvalidArgument, "database: non-finite entry");
  require(std::abs(descriptor.norm() - 1.0) <= norm_tol, ErrorCode::InvalidArgument,
          "database: descriptor '" + id + "' is not unit norm");
  entries_.push_back({std::move(id), position, descriptor});
}

namespace {

std::vector<Hit> full_ranking(const DescriptorDatabase& db, const Eigen::VectorXd& q) {
  require(!db.empty(), ErrorCode::InvalidArgument, "query: empty database");
  require(q.size() == db.dim(), ErrorCode::InvalidArgument, "query: descriptor dimension mismatch");
  std::vector<Hit> hits(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) hits[i] = {i, (db[i].descriptor - q).norm()};
  std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.distance < b.distance; });
  return hits;
}

/// Rank (0-based) of the first positive, or size() when none.
std::size_t first_positive(const DescriptorDatabase& db, const Query& q, double radius) {
  const auto hits = full_ranking(db, q.descriptor);
  for (std::size_t r = 0; r < hits.size(); ++r)
    if ((db[hits[r].index].position - q.position).norm() < radius) return r;
  return hits.size();
}

}  // namespace

RetrievalResult query_topk(const DescriptorDatabase& db, const Eigen::VectorXd& q, std::size_t k) {
  require(k >= 1 && k <= db.size(), ErrorCode::InvalidArgument, "query_topk: k must lie in [1, database size]");
  auto hits = full_ranking(db, q);
  hits.resize(k);
  return hits;
}

std::vector<double> recall_curve(const std::vector<Query>& queries, const DescriptorDatabase& db, std::size_t max_n,
                                 double positive_radius) {
  require(max_n >= 1 && max_n <= db.size(), ErrorCode::InvalidArgument, "recall_curve: max_n must lie in [1, database size]");
  require(positive_radius > 0.0, ErrorCode::InvalidArgument, "recall: positive radius must be > 0");
  std::vector<double> curve(max_n, 0.0);
  if (queries.empty()) return curve;
  std::vector<std::size_t> hits_at(max_n, 0);
  for (const auto& q : queries) {
    const std::size_t r = first_positive(db, q, positive_radius);
    if (r < max_n) ++hits_at[r];
  }
  std::size_t cum = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    cum += hits_at[n];
    curve[n] = 100.0 * static_cast<double>(cum) / static_cast<double>(queries.size());
  }
  return curve;
}

double recall_at_n(const std::vector<Query>& queries, const DescriptorDatabase& db, std::size_t n,
                   double positive_radius) {
  require(n >= 1, ErrorCode::InvalidArgument, "recall_at_n: n must be >= 1");
  require(!db.empty(), ErrorCode::InvalidArgument, "recall_at_n: empty database");
  return recall_curve(queries, db, std::min(n, db.size()), positive_radius).back();
}

std::size_t one_percent_cutoff(std::size_t db_size) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(db_size) / 100.0)));
}

}  // namespace pcdesc::retrieval
