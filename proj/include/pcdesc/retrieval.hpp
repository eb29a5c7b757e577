#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace pcdesc::retrieval {

struct DatabaseEntry {
  std::string id;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // 2D positions use z = 0
  Eigen::VectorXd descriptor;
};

/// Global descriptors with positions; all of one dimension and unit norm.
class DescriptorDatabase {
 public:
  DescriptorDatabase() = default;
  explicit DescriptorDatabase(int dim) : dim_(dim) {}

  /// Throws invalid-argument on a dimension mismatch or a norm farther than
  /// `norm_tol` from one.
  void add(std::string id, const Eigen::Vector3d& position, const Eigen::VectorXd& descriptor, double norm_tol = 1e-5);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  int dim() const noexcept { return dim_; }
  const DatabaseEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<DatabaseEntry>& entries() const noexcept { return entries_; }

 private:
  int dim_ = 0;  // fixed by the first entry when zero
  std::vector<DatabaseEntry> entries_;
};

struct Hit {
  std::size_t index = 0;  // insertion position
  double distance = 0.0;
};

/// Ascending L2 distance; ties by insertion order.
using RetrievalResult = std::vector<Hit>;

/// Throws invalid-argument on an empty database or k outside [1, size].
RetrievalResult query_topk(const DescriptorDatabase& db, const Eigen::VectorXd& q, std::size_t k);

struct Query {
  Eigen::VectorXd descriptor;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Percentage of queries with a database entry within positive_radius of the
/// true position among their top n results.
double recall_at_n(const std::vector<Query>& queries, const DescriptorDatabase& db, std::size_t n,
                   double positive_radius = 25.0);

/// Entry n-1 is recall_at_n(n) for n = 1..max_n.
std::vector<double> recall_curve(const std::vector<Query>& queries, const DescriptorDatabase& db, std::size_t max_n,
                                 double positive_radius = 25.0);

/// Top-1% cutoff: max(1, round(size / 100)).
std::size_t one_percent_cutoff(std::size_t db_size);

}  // namespace pcdesc::retrieval
