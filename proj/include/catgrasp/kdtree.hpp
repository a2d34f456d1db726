#pragma once

#include <algorithm>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include "catgrasp/geometry.hpp"

namespace catgrasp {

/// Exact 3-D kd-tree over a fixed point set.
///
/// Nearest-neighbour ties are broken toward the lowest point index so that
/// results match an exhaustive scan bit for bit. Radius queries return
/// indices in ascending order.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> pts) : pts_(pts.begin(), pts.end()) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!pts_.empty()) {
      nodes_.reserve(2 * pts_.size() / kLeafSize + 2);
      build(0, static_cast<int>(idx_.size()));
    }
  }

  std::size_t size() const { return pts_.size(); }
  bool empty() const { return pts_.empty(); }
  const std::vector<Vec3>& points() const { return pts_; }

  struct Hit {
    int index = -1;
    double dist_sq = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& q) const {
    Hit best;
    if (!nodes_.empty()) nearest_rec(0, q, best);
    return best;
  }

  /// All indices with |p - q| <= radius, ascending.
  std::vector<int> radius(const Vec3& q, double r) const {
    std::vector<int> out;
    if (!nodes_.empty()) radius_rec(0, q, r * r, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// k nearest, sorted by (distance, index).
  std::vector<Hit> knn(const Vec3& q, std::size_t k) const {
    std::vector<Hit> heap;  // max-heap on (dist, index)
    if (nodes_.empty() || k == 0) return heap;
    heap.reserve(k + 1);
    knn_rec(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end(), hit_less);
    return heap;
  }

 private:
  static constexpr int kLeafSize = 8;

  struct Node {
    Aabb box;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };

  static bool hit_less(const Hit& a, const Hit& b) {
    return a.dist_sq < b.dist_sq || (a.dist_sq == b.dist_sq && a.index < b.index);
  }

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Aabb box;
    for (int i = begin; i < end; ++i) box.extend(pts_[idx_[i]]);
    nodes_[id].box = box;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin <= kLeafSize) return id;
    int axis = 0;
    box.extent().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                     [&](int a, int b) {
                       return pts_[a][axis] < pts_[b][axis] ||
                              (pts_[a][axis] == pts_[b][axis] && a < b);
                     });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void nearest_rec(int n, const Vec3& q, Hit& best) const {
    const Node& node = nodes_[n];
    if (node.box.distance_sq(q) > best.dist_sq) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const Hit h{idx_[i], (pts_[idx_[i]] - q).squaredNorm()};
        if (hit_less(h, best)) best = h;
      }
      return;
    }
    const double dl = nodes_[node.left].box.distance_sq(q);
    const double dr = nodes_[node.right].box.distance_sq(q);
    if (dl <= dr) {
      nearest_rec(node.left, q, best);
      nearest_rec(node.right, q, best);
    } else {
      nearest_rec(node.right, q, best);
      nearest_rec(node.left, q, best);
    }
  }

  void radius_rec(int n, const Vec3& q, double r2, std::vector<int>& out) const {
    const Node& node = nodes_[n];
    if (node.box.distance_sq(q) > r2) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        if ((pts_[idx_[i]] - q).squaredNorm() <= r2) out.push_back(idx_[i]);
      }
      return;
    }
    radius_rec(node.left, q, r2, out);
    radius_rec(node.right, q, r2, out);
  }

  void knn_rec(int n, const Vec3& q, std::size_t k, std::vector<Hit>& heap) const {
    const Node& node = nodes_[n];
    const double bound = heap.size() < k ? std::numeric_limits<double>::infinity()
                                         : heap.front().dist_sq;
    if (node.box.distance_sq(q) > bound) return;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const Hit h{idx_[i], (pts_[idx_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(h);
          std::push_heap(heap.begin(), heap.end(), hit_less);
        } else if (hit_less(h, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), hit_less);
          heap.back() = h;
          std::push_heap(heap.begin(), heap.end(), hit_less);
        }
      }
      return;
    }
    const double dl = nodes_[node.left].box.distance_sq(q);
    const double dr = nodes_[node.right].box.distance_sq(q);
    if (dl <= dr) {
      knn_rec(node.left, q, k, heap);
      knn_rec(node.right, q, k, heap);
    } else {
      knn_rec(node.right, q, k, heap);
      knn_rec(node.left, q, k, heap);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<int> idx_;
  std::vector<Node> nodes_;
};

}  // namespace catgrasp
