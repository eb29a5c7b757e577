#pragma once

#include "pcdesc/geometry.hpp"

#include <cstdint>
#include <vector>

namespace pcdesc {

struct Neighbor {
  std::size_t index;
  double distance;
};

/// Static kd-tree over a point set. Results are exactly those of a brute-force
/// sort by (distance, index). Queries are const and safe to run concurrently.
class NeighborIndex {
 public:
  explicit NeighborIndex(const PointCloud& cloud, std::size_t leaf_size = 12);
  explicit NeighborIndex(std::vector<Point3> points, std::size_t leaf_size = 12);

  /// k nearest points, ascending. Throws invalid-argument unless 1 <= k <= size().
  std::vector<Neighbor> knn(const Point3& query, std::size_t k) const;

  /// Nearest point only; cheaper than knn(q, 1).
  Neighbor nearest(const Point3& query) const;

  /// All points with distance strictly below radius, ascending.
  std::vector<Neighbor> radius(const Point3& query, double radius) const;

  std::size_t size() const noexcept { return points_.size(); }
  const Point3& point(std::size_t i) const { return points_[i]; }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
    int dim = 0;
    double split = 0.0;
  };
  struct HeapEntry {
    double d2;
    std::uint32_t index;
    bool operator<(const HeapEntry& o) const {
      return d2 < o.d2 || (d2 == o.d2 && index < o.index);
    }
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void knn_recurse(std::int32_t node, const Point3& q, std::size_t k,
                   std::vector<HeapEntry>& heap) const;
  void radius_recurse(std::int32_t node, const Point3& q, double r2,
                      std::vector<HeapEntry>& out) const;

  std::vector<Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

}  // namespace pcdesc
