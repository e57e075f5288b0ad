// End-to-end upsampling: interpolate, refine per patch, merge.
#pragma once

#include "pcup/core.hpp"
#include "pcup/distance_field.hpp"
#include "pcup/p2pnet.hpp"
#include "pcup/refinement.hpp"
#include "pcup/sampling.hpp"

#include <functional>

namespace pcup {

struct UpsampleConfig {
  InterpolationConfig interpolation;
  PatchConfig patch;  // patch_size counts low-res points
  RefineConfig refine;
};

struct UpsampleResult {
  PointCloud interpolated;
  PointCloud output;
  /// Point-weighted mean over patches, in input units (grad-descent only).
  RefineTrace trace;
};

/// What drives refinement inside one normalized patch. Exactly one member is
/// needed, depending on the strategy.
struct PatchModel {
  std::unique_ptr<DistanceField> field;
  std::unique_ptr<OffsetModel> offset;
};

using PatchModelFactory = std::function<PatchModel(const Patch&)>;

/// Refines one normalized patch with the configured strategy.
inline PointCloud refine_patch(const PointCloud& patch, const PatchModel& model, const RefineConfig& cfg,
                               RefineTrace* trace = nullptr) {
  switch (cfg.strategy) {
    case RefineStrategy::grad_descent: {
      if (!model.field) throw ValidationError("pipeline", "grad-descent needs a distance field");
      auto [out, t] = refine(patch, *model.field, cfg);
      if (trace) *trace = std::move(t);
      return out;
    }
    case RefineStrategy::normalized_projection:
      if (!model.field) throw ValidationError("pipeline", "normalized-projection needs a distance field");
      return refine_projection(patch, *model.field, cfg);
    case RefineStrategy::auto_offset:
      if (!model.offset) throw ValidationError("pipeline", "auto-offset needs an offset model (offset-head checkpoint)");
      return refine_offset(patch, *model.offset, cfg);
  }
  throw ValidationError("pipeline", "unknown strategy");
}

/// Runs the patch pipeline with an arbitrary model per patch. With zero
/// refinement iterations the interpolated cloud is returned unchanged.
inline UpsampleResult upsample_with(const PointCloud& low, const UpsampleConfig& cfg, const PatchModelFactory& make_model,
                                    std::size_t min_patch_points = 4) {
  UpsampleResult res;
  res.interpolated = midpoint_interpolate(low, cfg.interpolation);
  if (cfg.refine.iterations == 0) {
    res.output = res.interpolated;
    return res;
  }
  cfg.refine.validate();
  PatchConfig pc = cfg.patch;
  pc.patch_size = std::min(res.interpolated.size(),
                           std::max(min_patch_points, target_count(cfg.interpolation.rate, cfg.patch.patch_size)));
  const auto patches = extract_patches(res.interpolated, pc);

  std::vector<PointCloud> refined;
  refined.reserve(patches.size());
  std::vector<double> dist_sum(cfg.refine.iterations + 1, 0.0);
  std::size_t total = 0;
  for (const auto& patch : patches) {
    const PatchModel model = make_model(patch);
    RefineTrace trace;
    PointCloud moved = refine_patch(patch.cloud, model, cfg.refine, &trace);
    for (std::size_t t = 0; t < trace.mean_distance.size(); ++t) {
      dist_sum[t] += static_cast<double>(trace.mean_distance[t] * patch.transform.scale) *
                     static_cast<double>(patch.cloud.size());
    }
    for (auto& w : trace.warnings) res.trace.warnings.push_back(std::move(w));
    total += patch.cloud.size();
    refined.push_back(denormalize(moved, patch.transform));
  }
  if (cfg.refine.strategy == RefineStrategy::grad_descent) {
    for (double s : dist_sum) res.trace.mean_distance.push_back(static_cast<real>(s / static_cast<double>(total)));
  }
  res.output = merge_patches(refined, res.interpolated.size());
  return res;
}

/// Upsampling guided by the learned network: a distance field for
/// grad-descent/projection, or displacements for an offset-head checkpoint.
inline UpsampleResult upsample_learned(const PointCloud& low, std::shared_ptr<const NetworkParams> params,
                                       const UpsampleConfig& cfg) {
  const bool offset = params->config.head == Head::offset;
  if (offset != (cfg.refine.strategy == RefineStrategy::auto_offset) && cfg.refine.iterations > 0) {
    throw ValidationError("pipeline", std::string("strategy ") + to_string(cfg.refine.strategy) +
                                          " does not match the checkpoint's " + to_string(params->config.head) +
                                          " head");
  }
  return upsample_with(
      low, cfg,
      [&](const Patch& patch) {
        auto feats = std::make_shared<ExtractedFeatures>(extract_features(patch.cloud, *params));
        PatchModel m;
        if (offset) {
          m.offset = std::make_unique<LearnedOffsetModel>(params, std::move(feats));
        } else {
          m.field = std::make_unique<LearnedField>(params, std::move(feats));
        }
        return m;
      },
      params->config.k + 1);
}

/// Upsampling guided by the exact distance to a known ground truth.
inline UpsampleResult upsample_oracle(const PointCloud& low, const PointCloud& gt, const UpsampleConfig& cfg) {
  return upsample_with(low, cfg, [&](const Patch& patch) {
    PatchModel m;
    m.field = std::make_unique<ExactOracle>(patch.transform.apply(gt));
    return m;
  });
}

}  // namespace pcup
