// Chamfer, Hausdorff and point-to-surface metrics, plus the noise harness.
#pragma once

#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/spatial_index.hpp"

#include <optional>
#include <random>

namespace pcup {

struct ChamferOptions {
  bool squared = false;
  /// Average the two directional means instead of summing them.
  bool mean_of_directions = false;
};

namespace metrics_detail {

/// Nearest distance from every point of `from` to the set `to`.
inline std::vector<real> directed(const PointCloud& from, const SpatialIndex& to) {
  std::vector<real> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = to.nearest(from[i]).distance;
  return out;
}

inline void require_nonempty(const PointCloud& a, const PointCloud& b, const char* what) {
  if (a.empty() || b.empty()) throw EmptyInputError("metrics", std::string(what) + " of an empty cloud");
}

}  // namespace metrics_detail

inline real chamfer(const PointCloud& a, const PointCloud& b, const ChamferOptions& opt = {}) {
  metrics_detail::require_nonempty(a, b, "chamfer");
  const SpatialIndex ia(a), ib(b);
  auto mean = [&](const std::vector<real>& d) {
    real s = 0;
    for (real x : d) s += opt.squared ? x * x : x;
    return s / static_cast<real>(d.size());
  };
  const real sum = mean(metrics_detail::directed(a, ib)) + mean(metrics_detail::directed(b, ia));
  return opt.mean_of_directions ? sum / 2 : sum;
}

/// Symmetric Hausdorff distance; `one_sided` keeps only the a -> b term.
inline real hausdorff(const PointCloud& a, const PointCloud& b, bool one_sided = false) {
  metrics_detail::require_nonempty(a, b, "hausdorff");
  const SpatialIndex ib(b);
  real h = 0;
  for (real x : metrics_detail::directed(a, ib)) h = std::max(h, x);
  if (!one_sided) {
    const SpatialIndex ia(a);
    for (real x : metrics_detail::directed(b, ia)) h = std::max(h, x);
  }
  return h;
}

/// Mean distance from the cloud to the mesh surface (one direction only).
inline real p2f(const PointCloud& cloud, const MeshDistance& surface) {
  if (cloud.empty()) throw EmptyInputError("metrics", "p2f of an empty cloud");
  real s = 0;
  for (const auto& p : cloud) s += surface(p);
  return s / static_cast<real>(cloud.size());
}

inline real p2f(const PointCloud& cloud, const TriMesh& mesh) { return p2f(cloud, MeshDistance(mesh)); }

/// Adds tau * N(0, 1) to every coordinate.
inline PointCloud add_noise(const PointCloud& cloud, real tau, std::mt19937_64& rng) {
  if (!(tau >= 0)) throw ValidationError("metrics", "noise level must be >= 0");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Point3> out = cloud.points();
  if (tau == 0) return PointCloud(std::move(out));
  for (auto& p : out) {
    for (int c = 0; c < 3; ++c) p[c] += tau * static_cast<real>(n01(rng));
  }
  return PointCloud(std::move(out));
}

struct MetricsReport {
  real cd = 0;
  real hd = 0;
  std::optional<real> p2f;
  std::size_t n_points = 0;
};

inline MetricsReport evaluate_metrics(const PointCloud& pred, const PointCloud& gt, const TriMesh* mesh = nullptr,
                                      const ChamferOptions& opt = {}, bool one_sided_hd = false) {
  MetricsReport r;
  r.cd = chamfer(pred, gt, opt);
  r.hd = hausdorff(pred, gt, one_sided_hd);
  if (mesh) r.p2f = p2f(pred, *mesh);
  r.n_points = pred.size();
  return r;
}

}  // namespace pcup
