// Iterative point location refinement against a distance field.
#pragma once

#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/metrics.hpp"
#include "pcup/p2pnet.hpp"

#include <optional>
#include <ostream>
#include <string>

namespace pcup {

enum class RefineStrategy { grad_descent, auto_offset, normalized_projection };

inline const char* to_string(RefineStrategy s) {
  switch (s) {
    case RefineStrategy::grad_descent: return "grad-descent";
    case RefineStrategy::auto_offset: return "auto-offset";
    case RefineStrategy::normalized_projection: return "normalized-projection";
  }
  return "?";
}

inline RefineStrategy parse_strategy(const std::string& s) {
  if (s == "grad-descent") return RefineStrategy::grad_descent;
  if (s == "auto-offset") return RefineStrategy::auto_offset;
  if (s == "normalized-projection") return RefineStrategy::normalized_projection;
  throw Error(ErrorKind::usage, "refinement",
              "unknown strategy '" + s + "' (valid: grad-descent, auto-offset, normalized-projection)");
}

struct RefineConfig {
  RefineStrategy strategy = RefineStrategy::grad_descent;
  real step = real(0.02);
  std::size_t iterations = 10;
  bool refresh_features = true;

  void validate() const {
    if (!(step > 0)) throw ValidationError("refinement", "step must be positive");
    if (iterations < 1) throw ValidationError("refinement", "iterations must be >= 1");
  }
};

/// Per-iteration diagnostics; entry t describes the cloud after t updates.
struct RefineTrace {
  std::vector<real> mean_distance;
  std::vector<real> chamfer_to_gt;  // empty unless a ground truth was supplied
  std::vector<std::string> warnings;

  void write_csv(std::ostream& out) const {
    out << "iteration,mean_predicted_distance";
    if (!chamfer_to_gt.empty()) out << ",cd_to_gt";
    out << '\n';
    char buf[64];
    for (std::size_t t = 0; t < mean_distance.size(); ++t) {
      out << t;
      std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(mean_distance[t]));
      out << buf;
      if (!chamfer_to_gt.empty()) {
        std::snprintf(buf, sizeof buf, ",%.17g", static_cast<double>(chamfer_to_gt[t]));
        out << buf;
      }
      out << '\n';
    }
  }
};

namespace refine_detail {

inline real mean(const std::vector<real>& v) {
  real s = 0;
  for (real x : v) s += x;
  return v.empty() ? real(0) : s / static_cast<real>(v.size());
}

inline void check_finite(const std::vector<Point3>& pts, std::size_t iteration) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!is_finite(pts[i])) {
      throw NumericError("refinement", "non-finite update at iteration " + std::to_string(iteration) + ", point " +
                                           std::to_string(i));
    }
  }
}

inline void record(RefineTrace& trace, const std::vector<real>& values, const std::vector<Point3>& pts,
                   const PointCloud* gt) {
  trace.mean_distance.push_back(mean(values));
  if (gt) trace.chamfer_to_gt.push_back(chamfer(PointCloud(pts), *gt));
  const auto& m = trace.mean_distance;
  const std::size_t n = m.size();
  if (n >= 4 && m[n - 1] > m[n - 2] && m[n - 2] > m[n - 3] && m[n - 3] > m[n - 4]) {
    trace.warnings.push_back("mean predicted distance increased for 3 consecutive iterations (up to iteration " +
                             std::to_string(n - 1) + ")");
  }
}

/// The field to query during refinement: pinned to the start positions
/// when features are not refreshed.
inline std::unique_ptr<DistanceField> field_for(const DistanceField& field, const std::vector<Point3>& start,
                                                const RefineConfig& cfg) {
  return cfg.refresh_features ? nullptr : field.pinned_at(start);
}

}  // namespace refine_detail

/// Synchronous gradient descent p <- p - step * grad F(p), `iterations` times.
inline std::pair<PointCloud, RefineTrace> refine(const PointCloud& start, const DistanceField& field,
                                                 const RefineConfig& cfg, const PointCloud* ground_truth = nullptr) {
  cfg.validate();
  if (cfg.strategy != RefineStrategy::grad_descent) {
    throw ValidationError("refinement", std::string("refine() runs grad-descent, got ") + to_string(cfg.strategy));
  }
  std::vector<Point3> pts = start.points();
  auto pinned = refine_detail::field_for(field, pts, cfg);
  const DistanceField& f = pinned ? *pinned : field;

  RefineTrace trace;
  std::vector<real> values;
  std::vector<Vec3> grads;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    f.evaluate(pts, values, &grads);
    refine_detail::record(trace, values, pts, ground_truth);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] -= cfg.step * grads[i];
    refine_detail::check_finite(pts, t);
  }
  f.evaluate(pts, values, nullptr);
  refine_detail::record(trace, values, pts, ground_truth);
  return {PointCloud(std::move(pts)), std::move(trace)};
}

/// Auto-regressive displacement updates p <- p + step * offset(p).
inline PointCloud refine_offset(const PointCloud& start, const OffsetModel& model, const RefineConfig& cfg) {
  cfg.validate();
  if (cfg.strategy != RefineStrategy::auto_offset) {
    throw ValidationError("refinement", std::string("refine_offset() runs auto-offset, got ") + to_string(cfg.strategy));
  }
  std::vector<Point3> pts = start.points();
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const auto offsets = model.predict(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] += cfg.step * offsets[i];
    refine_detail::check_finite(pts, t);
  }
  return PointCloud(std::move(pts));
}

/// Projection p <- p - F(p) * grad F(p) / |grad F(p)|. Points whose gradient
/// norm is below 1e-12 stay put for that iteration.
inline PointCloud refine_projection(const PointCloud& start, const DistanceField& field, const RefineConfig& cfg) {
  cfg.validate();
  if (cfg.strategy != RefineStrategy::normalized_projection) {
    throw ValidationError("refinement",
                          std::string("refine_projection() runs normalized-projection, got ") + to_string(cfg.strategy));
  }
  std::vector<Point3> pts = start.points();
  auto pinned = refine_detail::field_for(field, pts, cfg);
  const DistanceField& f = pinned ? *pinned : field;
  std::vector<real> values;
  std::vector<Vec3> grads;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    f.evaluate(pts, values, &grads);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const real norm = grads[i].norm();
      if (norm < real(1e-12)) continue;
      pts[i] -= values[i] * grads[i] / norm;
    }
    refine_detail::check_finite(pts, t);
  }
  return PointCloud(std::move(pts));
}

}  // namespace pcup
