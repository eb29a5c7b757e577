#include "pcdesc/neighbor_index.hpp"

#include "pcdesc/error.hpp"

#include <algorithm>
#include <cmath>

namespace pcdesc {

NeighborIndex::NeighborIndex(const PointCloud& cloud, std::size_t leaf_size)
    : NeighborIndex(cloud.points, leaf_size) {}

NeighborIndex::NeighborIndex(std::vector<Point3> points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  require(!points_.empty(), ErrorCode::InvalidArgument, "NeighborIndex: empty point set");
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t NeighborIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int dim = 0;
  (hi - lo).maxCoeff(&dim);
  if (hi[dim] == lo[dim]) return id;  // all coincident: keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][dim] < points_[b][dim];
                   });
  const double split = points_[order_[mid]][dim];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].dim = dim;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NeighborIndex::knn_recurse(std::int32_t node_id, const Point3& q, std::size_t k,
                                std::vector<HeapEntry>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const HeapEntry e{(points_[idx] - q).squaredNorm(), idx};
      if (heap.size() < k) {
        heap.push_back(e);
        std::push_heap(heap.begin(), heap.end());
      } else if (e < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = e;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double diff = q[node.dim] - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  knn_recurse(near, q, k, heap);
  // <= keeps equal-distance candidates with lower indices reachable.
  if (heap.size() < k || diff * diff <= heap.front().d2) knn_recurse(far, q, k, heap);
}

std::vector<Neighbor> NeighborIndex::knn(const Point3& query, std::size_t k) const {
  require(k >= 1 && k <= points_.size(), ErrorCode::InvalidArgument,
          "knn: k must lie in [1, N]");
  std::vector<HeapEntry> heap;
  heap.reserve(k + 1);
  knn_recurse(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  for (const auto& e : heap) out.push_back({e.index, std::sqrt(e.d2)});
  return out;
}

Neighbor NeighborIndex::nearest(const Point3& query) const { return knn(query, 1).front(); }

void NeighborIndex::radius_recurse(std::int32_t node_id, const Point3& q, double r2,
                                   std::vector<HeapEntry>& out) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < r2) out.push_back({d2, idx});
    }
    return;
  }
  const double diff = q[node.dim] - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  radius_recurse(near, q, r2, out);
  if (diff * diff < r2) radius_recurse(far, q, r2, out);
}

std::vector<Neighbor> NeighborIndex::radius(const Point3& query, double r) const {
  std::vector<HeapEntry> hits;
  if (r > 0) radius_recurse(0, query, r * r, hits);
  std::sort(hits.begin(), hits.end());
  std::vector<Neighbor> out;
  out.reserve(hits.size());
  for (const auto& e : hits) out.push_back({e.index, std::sqrt(e.d2)});
  return out;
}

}  // namespace pcdesc
