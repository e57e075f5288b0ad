// Exact nearest-neighbour search over a fixed point set.
//
// Results are identical to a brute-force scan ordered by (distance, index):
// subtrees are pruned only when their box is strictly farther than the
// current k-th candidate, so equal-distance points with a lower index are
// never missed.
#pragma once

#include "pcup/core.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>
#include <vector>

namespace pcup {

struct Neighbor {
  std::size_t index;
  real distance;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

class SpatialIndex {
 public:
  explicit SpatialIndex(PointCloud cloud, std::size_t leaf_size = 12) : source_(std::move(cloud)), leaf_size_(leaf_size) {
    if (source_.empty()) throw EmptyInputError("spatial-index", "cannot build an index over an empty cloud");
    order_.resize(source_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * source_.size() / std::max<std::size_t>(leaf_size_, 1) + 1);
    build(0, order_.size());
  }

  const PointCloud& source() const noexcept { return source_; }
  std::size_t size() const noexcept { return source_.size(); }

  /// k nearest source points sorted by (distance, index). With exclude_self,
  /// source points exactly equal to the query are skipped.
  std::vector<Neighbor> knn(const Point3& query, std::size_t k, bool exclude_self = false) const {
    if (k == 0) return {};
    if (k > size() || (exclude_self && k >= size())) {
      throw ValidationError("spatial-index", "k=" + std::to_string(k) + " exceeds candidate count " +
                                                 std::to_string(exclude_self ? size() - 1 : size()));
    }
    Heap heap;
    search(0, query, k, exclude_self, heap);
    if (heap.size() < k) {
      throw ValidationError("spatial-index", "k=" + std::to_string(k) + " exceeds candidate count " +
                                                 std::to_string(heap.size()) + " (duplicates of the query excluded)");
    }
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = {heap.top().index, std::sqrt(heap.top().sq)};
      heap.pop();
    }
    return out;
  }

  Neighbor nearest(const Point3& query) const { return knn(query, 1, false).front(); }

 private:
  struct Node {
    Point3 lo, hi;
    std::size_t begin, end;
    std::size_t left = 0, right = 0;  // 0 means leaf (root is never a child)
    int axis = 0;
  };

  struct Candidate {
    real sq;
    std::size_t index;
    bool operator<(const Candidate& o) const { return sq < o.sq || (sq == o.sq && index < o.index); }
  };
  using Heap = std::priority_queue<Candidate>;

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Point3 lo = Point3::Constant(std::numeric_limits<real>::infinity());
    Point3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(source_[order_[i]]);
      hi = hi.cwiseMax(source_[order_[i]]);
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    if (end - begin > leaf_size_) {
      int axis = 0;
      (hi - lo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                       order_.begin() + static_cast<std::ptrdiff_t>(mid),
                       order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                         const real va = source_[a][axis], vb = source_[b][axis];
                         return va < vb || (va == vb && a < b);
                       });
      nodes_[id].axis = axis;
      const std::size_t l = build(begin, mid);
      const std::size_t r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  static real box_sq_distance(const Node& n, const Point3& q) {
    real s = 0;
    for (int c = 0; c < 3; ++c) {
      real d = 0;
      if (q[c] < n.lo[c]) d = n.lo[c] - q[c];
      else if (q[c] > n.hi[c]) d = q[c] - n.hi[c];
      s += d * d;
    }
    return s;
  }

  void search(std::size_t id, const Point3& q, std::size_t k, bool exclude_self, Heap& heap) const {
    const Node& n = nodes_[id];
    if (n.left == 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const real sq = squared_distance(q, source_[idx]);
        if (exclude_self && source_[idx] == q) continue;
        Candidate c{sq, idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const Node& a = nodes_[n.left];
    const Node& b = nodes_[n.right];
    const real da = box_sq_distance(a, q);
    const real db = box_sq_distance(b, q);
    const std::size_t first = da <= db ? n.left : n.right;
    const std::size_t second = da <= db ? n.right : n.left;
    const real dfirst = std::min(da, db), dsecond = std::max(da, db);
    if (heap.size() < k || dfirst <= heap.top().sq) search(first, q, k, exclude_self, heap);
    if (heap.size() < k || dsecond <= heap.top().sq) search(second, q, k, exclude_self, heap);
  }

  PointCloud source_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace pcup
