#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "denseflow/error.hpp"

namespace denseflow {

/// kD-tree over fixed-length float vectors with best-bin-first search.
template <std::size_t Dim>
class KdTree {
 public:
  using Point = std::array<float, Dim>;

  KdTree() = default;
  explicit KdTree(std::vector<Point> points, int leaf_size = 8)
      : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) build(0, static_cast<int>(points_.size()));
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Point& point(int i) const { return points_[i]; }

  /// Index of an approximate nearest neighbor (squared Euclidean). Search
  /// stops after `max_leaf_visits` leaves; 0 means unlimited, which makes the
  /// result exact. Ties resolve to the lowest index.
  int nearest(const Point& query, int max_leaf_visits = 0) const {
    if (points_.empty()) throw Error(ErrorCode::InvalidInput, "nearest-neighbor query on an empty kd-tree");
    struct Pending {
      float bound;
      int node;
      bool operator>(const Pending& o) const { return bound > o.bound || (bound == o.bound && node > o.node); }
    };
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> queue;
    queue.push({0.0f, 0});
    float best = std::numeric_limits<float>::infinity();
    int best_index = -1;
    int leaves = 0;
    while (!queue.empty()) {
      const Pending top = queue.top();
      queue.pop();
      if (top.bound > best) break;
      int node = top.node;
      float bound = top.bound;
      while (nodes_[node].dim >= 0) {
        const Node& n = nodes_[node];
        const float diff = query[n.dim] - n.split;
        const int near = diff <= 0.0f ? n.left : n.right;
        const int far = diff <= 0.0f ? n.right : n.left;
        queue.push({std::max(bound, diff * diff), far});
        node = near;
      }
      const Node& leaf = nodes_[node];
      for (int i = leaf.begin; i < leaf.end; ++i) {
        const int idx = order_[i];
        const float d = distance2(query, points_[idx]);
        if (d < best || (d == best && idx < best_index)) {
          best = d;
          best_index = idx;
        }
      }
      if (max_leaf_visits > 0 && ++leaves >= max_leaf_visits) break;
    }
    return best_index;
  }

  static float distance2(const Point& a, const Point& b) {
    float acc = 0.0f;
    for (std::size_t k = 0; k < Dim; ++k) {
      const float d = a[k] - b[k];
      acc += d * d;
    }
    return acc;
  }

 private:
  struct Node {
    int dim = -1;  // -1 marks a leaf
    float split = 0.0f;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= leaf_size_) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    int best_dim = 0;
    float best_spread = -1.0f;
    for (std::size_t k = 0; k < Dim; ++k) {
      float lo = std::numeric_limits<float>::infinity(), hi = -lo;
      for (int i = begin; i < end; ++i) {
        lo = std::min(lo, points_[order_[i]][k]);
        hi = std::max(hi, points_[order_[i]][k]);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = static_cast<int>(k);
      }
    }
    if (best_spread <= 0.0f) {  // all points identical
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
      const float pa = points_[a][best_dim], pb = points_[b][best_dim];
      return pa < pb || (pa == pb && a < b);
    });
    const float split = points_[order_[mid]][best_dim];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].dim = best_dim;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  std::vector<Point> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int leaf_size_ = 8;
};

}  // namespace denseflow
