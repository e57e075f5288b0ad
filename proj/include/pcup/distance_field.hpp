// Point-to-point distance fields and point-to-mesh distance.
#pragma once

#include "pcup/core.hpp"
#include "pcup/spatial_index.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <span>

namespace pcup {

/// Distance from a query to a target set, with its gradient w.r.t. the query.
class DistanceField {
 public:
  virtual ~DistanceField() = default;

  /// Batched evaluation. `gradients` may be null when only values are needed.
  virtual void evaluate(std::span<const Point3> queries, std::vector<real>& values,
                        std::vector<Vec3>* gradients) const = 0;

  /// A field whose query-dependent auxiliary state is pinned to `start`, so
  /// that later evaluations of the same (moved) queries reuse it. Returns
  /// null when the field has no such state.
  virtual std::unique_ptr<DistanceField> pinned_at(std::span<const Point3> /*start*/) const { return nullptr; }

  real value(const Point3& q) const {
    std::vector<real> v;
    evaluate(std::span<const Point3>(&q, 1), v, nullptr);
    return v.front();
  }

  Vec3 gradient(const Point3& q) const {
    std::vector<real> v;
    std::vector<Vec3> g;
    evaluate(std::span<const Point3>(&q, 1), v, &g);
    return g.front();
  }
};

/// Ground-truth field: exact distance to the nearest point of a target cloud.
class ExactOracle final : public DistanceField {
 public:
  explicit ExactOracle(PointCloud target) : index_(std::make_shared<SpatialIndex>(std::move(target))) {}
  explicit ExactOracle(std::shared_ptr<const SpatialIndex> index) : index_(std::move(index)) {}

  const SpatialIndex& index() const noexcept { return *index_; }

  real oracle_value(const Point3& q) const { return index_->nearest(q).distance; }

  /// Unit vector from the nearest target point to q; zero when q lies on it.
  Vec3 oracle_gradient(const Point3& q) const {
    const auto nb = index_->nearest(q);
    if (nb.distance == 0) return Vec3::Zero();
    return (q - index_->source()[nb.index]) / nb.distance;
  }

  void evaluate(std::span<const Point3> queries, std::vector<real>& values,
                std::vector<Vec3>* gradients) const override {
    values.resize(queries.size());
    if (gradients) gradients->resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto nb = index_->nearest(queries[i]);
      values[i] = nb.distance;
      if (gradients) {
        (*gradients)[i] = nb.distance == 0 ? Vec3::Zero()
                                           : Vec3((queries[i] - index_->source()[nb.index]) / nb.distance);
      }
    }
  }

 private:
  std::shared_ptr<const SpatialIndex> index_;
};

/// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
inline Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const real d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const real d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const real vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const real d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const real vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));

  const real va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

  const real denom = va + vb + vc;
  if (denom == 0) {
    // Collinear triangle: fall back to the best of its three edges.
    auto seg = [&](const Point3& s, const Point3& e) -> Point3 {
      const Vec3 se = e - s;
      const real len = se.squaredNorm();
      if (len == 0) return s;
      const real t = std::clamp((p - s).dot(se) / len, real(0), real(1));
      return s + se * t;
    };
    Point3 best = seg(a, b);
    for (const Point3& cand : {seg(b, c), seg(a, c)}) {
      if (squared_distance(p, cand) < squared_distance(p, best)) best = cand;
    }
    return best;
  }
  const real v = vb / denom, w = vc / denom;
  return a + ab * v + ac * w;
}

/// Exact point-to-surface distance with per-triangle bounding-box culling.
class MeshDistance {
 public:
  explicit MeshDistance(TriMesh mesh) : mesh_(std::move(mesh)) {
    mesh_.validate();
    if (mesh_.faces.empty()) throw EmptyInputError("mesh", "mesh has no faces");
    boxes_.reserve(mesh_.faces.size());
    for (const auto& f : mesh_.faces) {
      const Point3& a = mesh_.vertices[f[0]];
      const Point3& b = mesh_.vertices[f[1]];
      const Point3& c = mesh_.vertices[f[2]];
      boxes_.push_back({a.cwiseMin(b).cwiseMin(c), a.cwiseMax(b).cwiseMax(c)});
    }
  }

  const TriMesh& mesh() const noexcept { return mesh_; }

  real operator()(const Point3& q) const {
    real best = std::numeric_limits<real>::infinity();
    for (std::size_t i = 0; i < mesh_.faces.size(); ++i) {
      const auto& [lo, hi] = boxes_[i];
      const Vec3 below = (lo - q).cwiseMax(Vec3::Zero());
      const Vec3 above = (q - hi).cwiseMax(Vec3::Zero());
      if ((below + above).squaredNorm() >= best) continue;
      const auto& f = mesh_.faces[i];
      const Point3 cp =
          closest_point_on_triangle(q, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]);
      best = std::min(best, squared_distance(q, cp));
    }
    return std::sqrt(best);
  }

 private:
  TriMesh mesh_;
  std::vector<std::pair<Point3, Point3>> boxes_;
};

inline real mesh_distance(const TriMesh& mesh, const Point3& q) { return MeshDistance(mesh)(q); }

}  // namespace pcup
