// Minimal 3D kd-tree for k-nearest-neighbor queries over static point
// sets. Build is O(n log n), deterministic for a fixed input order.

#pragma once

#include "railfuse/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <vector>

namespace railfuse {

class KdTree {
 public:
  KdTree() = default;

  void build(std::vector<Vec3> points) {
    points_ = std::move(points);
    nodes_.clear();
    nodes_.reserve(points_.size());
    std::vector<int> idx(points_.size());
    std::iota(idx.begin(), idx.end(), 0);
    root_ = build_(idx, 0, static_cast<int>(idx.size()), 0);
  }

  size_t size() const { return points_.size(); }
  const Vec3& point(int i) const { return points_[i]; }

  struct Neighbor {
    int index;
    double sq_dist;
  };

  // k nearest neighbors, closest first.
  std::vector<Neighbor> knn(const Vec3& q, int k) const {
    std::priority_queue<std::pair<double, int>> heap;  // max-heap on sq dist
    if (root_ >= 0) search_(root_, q, k, heap);
    std::vector<Neighbor> out(heap.size());
    for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
      out[i] = { heap.top().second, heap.top().first };
      heap.pop();
    }
    return out;
  }

  // all points within radius, unsorted
  std::vector<int> radius(const Vec3& q, double r) const {
    std::vector<int> out;
    if (root_ >= 0) radius_(root_, q, r * r, out);
    return out;
  }

 private:
  struct Node {
    int point = -1;
    int left = -1, right = -1;
    uint8_t axis = 0;
  };

  int build_(std::vector<int>& idx, int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
      return points_[a][axis] < points_[b][axis] || (points_[a][axis] == points_[b][axis] && a < b);
    });
    Node n;
    n.point = idx[mid];
    n.axis = static_cast<uint8_t>(axis);
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    const int l = build_(idx, lo, mid, depth + 1);
    const int r = build_(idx, mid + 1, hi, depth + 1);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search_(int node, const Vec3& q, int k,
               std::priority_queue<std::pair<double, int>>& heap) const {
    const Node& n = nodes_[node];
    const double d2 = (points_[n.point] - q).squaredNorm();
    if (static_cast<int>(heap.size()) < k) {
      heap.emplace(d2, n.point);
    } else if (d2 < heap.top().first) {
      heap.pop();
      heap.emplace(d2, n.point);
    }
    const double split = points_[n.point][n.axis] - q[n.axis];
    const int near = split > 0 ? n.left : n.right;
    const int far = split > 0 ? n.right : n.left;
    if (near >= 0) search_(near, q, k, heap);
    if (far >= 0 &&
        (static_cast<int>(heap.size()) < k || split * split < heap.top().first)) {
      search_(far, q, k, heap);
    }
  }

  void radius_(int node, const Vec3& q, double r2, std::vector<int>& out) const {
    const Node& n = nodes_[node];
    if ((points_[n.point] - q).squaredNorm() <= r2) out.push_back(n.point);
    const double split = points_[n.point][n.axis] - q[n.axis];
    const int near = split > 0 ? n.left : n.right;
    const int far = split > 0 ? n.right : n.left;
    if (near >= 0) radius_(near, q, r2, out);
    if (far >= 0 && split * split <= r2) radius_(far, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace railfuse
