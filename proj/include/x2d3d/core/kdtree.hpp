#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "x2d3d/core/error.hpp"

namespace x2d3d {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0.0;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

inline double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Exact k-d tree over a dense row-major point buffer (n x dim). Results of
/// every query are identical to a brute-force scan, including the tie order
/// (ascending distance, then ascending insertion index).
class KdTree {
 public:
  static constexpr std::size_t kDefaultLeafSize = 16;

  KdTree() = default;

  KdTree(std::vector<double> data, std::size_t dim, std::size_t leaf_size = kDefaultLeafSize)
      : data_(std::move(data)), dim_(dim), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    if (dim_ == 0 || data_.size() % dim_ != 0) {
      throw Error(ErrorCode::kDimensionMismatch, "kd-tree buffer is not a multiple of the dimension");
    }
    order_.resize(data_.size() / dim_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!order_.empty()) build(0, order_.size());
  }

  std::size_t size() const { return order_.size(); }
  std::size_t dim() const { return dim_; }
  const double* point(std::size_t i) const { return data_.data() + i * dim_; }

  std::vector<Neighbor> knn(std::span<const double> query, std::size_t k) const {
    check_query(query);
    std::vector<Neighbor> heap;  // max-heap on (dist2, index)
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    knn_recurse(0, query.data(), k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// All points with squared distance <= radius^2, sorted by index.
  std::vector<std::size_t> radius_search(std::span<const double> query, double radius) const {
    check_query(query);
    std::vector<std::size_t> out;
    if (!nodes_.empty()) radius_recurse(0, query.data(), radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t dim = 0;
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  void check_query(std::span<const double> query) const {
    if (query.size() != dim_) throw Error(ErrorCode::kDimensionMismatch, "query dimension differs from tree");
  }

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) return id;

    std::size_t best_dim = 0;
    double best_spread = -1.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        const double v = point(order_[i])[d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = d;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) { return point(a)[best_dim] < point(b)[best_dim]; });
    const double split = point(order_[mid])[best_dim];
    nodes_[id].dim = best_dim;
    nodes_[id].split = split;
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void knn_recurse(int id, const double* q, std::size_t k, std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], squared_distance(q, point(order_[i]), dim_)};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    // Left holds values <= split, right holds values >= split.
    const double diff = q[node.dim] - node.split;
    const int near = diff <= 0.0 ? node.left : node.right;
    const int far = diff <= 0.0 ? node.right : node.left;
    knn_recurse(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.front().dist2) knn_recurse(far, q, k, heap);
  }

  void radius_recurse(int id, const double* q, double r2, std::vector<std::size_t>& out) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        if (squared_distance(q, point(order_[i]), dim_) <= r2) out.push_back(order_[i]);
      }
      return;
    }
    const double diff = q[node.dim] - node.split;
    if (diff <= 0.0 || diff * diff <= r2) radius_recurse(node.left, q, r2, out);
    if (diff >= 0.0 || diff * diff <= r2) radius_recurse(node.right, q, r2, out);
  }

  std::vector<double> data_;
  std::size_t dim_ = 0;
  std::size_t leaf_size_ = kDefaultLeafSize;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace x2d3d
