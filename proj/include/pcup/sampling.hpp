// Farthest point sampling, midpoint interpolation, patch extraction/merging.
#pragma once

#include "pcup/core.hpp"
#include "pcup/spatial_index.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace pcup {

/// Greedy farthest point sampling. Ties go to the lowest index.
inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t m, std::size_t seed = 0) {
  if (m > cloud.size()) {
    throw ValidationError("sampling", "fps: requested " + std::to_string(m) + " points from a cloud of " +
                                          std::to_string(cloud.size()));
  }
  if (m == 0) return {};
  if (seed >= cloud.size()) throw ValidationError("sampling", "fps: seed index out of range");
  const std::size_t n = cloud.size();
  std::vector<real> min_sq(n, std::numeric_limits<real>::infinity());
  std::vector<std::size_t> selected;
  selected.reserve(m);
  std::size_t current = seed;
  for (std::size_t s = 0; s < m; ++s) {
    selected.push_back(current);
    const Point3& c = cloud[current];
    std::size_t best = 0;
    real best_sq = -1;
    for (std::size_t i = 0; i < n; ++i) {
      const real sq = squared_distance(cloud[i], c);
      if (sq < min_sq[i]) min_sq[i] = sq;
      if (min_sq[i] > best_sq) {
        best_sq = min_sq[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

inline PointCloud select(const PointCloud& cloud, const std::vector<std::size_t>& indices) {
  std::vector<Point3> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(cloud[i]);
  return PointCloud(std::move(out));
}

struct InterpolationConfig {
  std::size_t k_neighbors = 16;
  double rate = 4.0;
  std::size_t fps_seed = 0;
  bool keep_original = true;
};

inline std::size_t target_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

namespace detail {

struct PointBitsHash {
  std::size_t operator()(const Point3& p) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (int c = 0; c < 3; ++c) {
      real v = p[c];
      if (v == 0) v = 0;  // fold -0 onto +0
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof v);
      h ^= bits + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return h;
  }
};

}  // namespace detail

/// Deduplicated pool of midpoints between each point and its k nearest
/// neighbours, in first-occurrence order. Midpoints coinciding with an input
/// point are dropped.
inline PointCloud midpoint_pool(const PointCloud& low, const SpatialIndex& index, std::size_t k) {
  std::unordered_set<Point3, detail::PointBitsHash> seen(low.begin(), low.end());
  std::vector<Point3> pool;
  pool.reserve(low.size() * k / 2 + 1);
  for (std::size_t i = 0; i < low.size(); ++i) {
    for (const auto& nb : index.knn(low[i], k, true)) {
      const Point3 mid = (low[i] + low[nb.index]) * real(0.5);
      if (seen.insert(mid).second) pool.push_back(mid);
    }
  }
  return PointCloud(std::move(pool));
}

/// Upsamples to round(rate * |low|) points: the input points (unless
/// keep_original is off) plus midpoints picked from the pool by fps.
inline PointCloud midpoint_interpolate(const PointCloud& low, const InterpolationConfig& cfg) {
  if (low.size() < 2) throw ValidationError("sampling", "midpoint interpolation needs at least 2 points");
  if (!(cfg.rate >= 1.0) || !std::isfinite(cfg.rate)) {
    throw ValidationError("sampling", "upsampling rate must be >= 1, got " + std::to_string(cfg.rate));
  }
  if (cfg.k_neighbors == 0 || cfg.k_neighbors >= low.size()) {
    throw ValidationError("sampling", "k_neighbors=" + std::to_string(cfg.k_neighbors) + " must be in [1, " +
                                          std::to_string(low.size() - 1) + "]");
  }
  const std::size_t target = target_count(cfg.rate, low.size());
  const std::size_t needed = cfg.keep_original ? target - low.size() : target;
  std::vector<Point3> out;
  out.reserve(target);
  if (cfg.keep_original) out = low.points();
  if (needed == 0) return PointCloud(std::move(out));

  SpatialIndex index(low);
  const PointCloud pool = midpoint_pool(low, index, cfg.k_neighbors);
  if (pool.size() < needed) {
    throw ValidationError("sampling", "midpoint pool exhausted: " + std::to_string(pool.size()) +
                                          " unique midpoints but " + std::to_string(needed) +
                                          " required; raise k_neighbors (currently " +
                                          std::to_string(cfg.k_neighbors) + ")");
  }
  for (auto i : fps(pool, needed, cfg.fps_seed)) out.push_back(pool[i]);
  return PointCloud(std::move(out));
}

struct PatchConfig {
  std::size_t patch_size = 256;
  double overlap_factor = 3.0;
};

struct Patch {
  PointCloud cloud;  // normalized
  NormalizeTransform transform;
  std::vector<std::size_t> indices;  // into the source cloud
};

inline std::size_t seed_count(const PatchConfig& cfg, std::size_t n) {
  return static_cast<std::size_t>(
      std::ceil(cfg.overlap_factor * static_cast<double>(n) / static_cast<double>(cfg.patch_size)));
}

/// Patches of patch_size nearest neighbours around fps seeds. Extra patches
/// are appended around uncovered points until every point belongs to one.
inline std::vector<Patch> extract_patches(const PointCloud& cloud, const PatchConfig& cfg) {
  if (cfg.patch_size == 0 || cfg.patch_size > cloud.size()) {
    throw ValidationError("sampling", "patch_size=" + std::to_string(cfg.patch_size) + " exceeds cloud size " +
                                          std::to_string(cloud.size()));
  }
  if (!(cfg.overlap_factor >= 1.0)) throw ValidationError("sampling", "overlap_factor must be >= 1");
  const SpatialIndex index(cloud);
  const std::size_t n_seeds = std::min(seed_count(cfg, cloud.size()), cloud.size());
  std::vector<std::size_t> seeds = fps(cloud, n_seeds, 0);

  std::vector<Patch> patches;
  std::vector<bool> covered(cloud.size(), false);
  auto add_patch = [&](std::size_t seed) {
    Patch p;
    std::vector<Point3> pts;
    pts.reserve(cfg.patch_size);
    for (const auto& nb : index.knn(cloud[seed], cfg.patch_size, false)) {
      p.indices.push_back(nb.index);
      pts.push_back(cloud[nb.index]);
      covered[nb.index] = true;
    }
    auto [normed, t] = normalize(PointCloud(std::move(pts)));
    p.cloud = std::move(normed);
    p.transform = t;
    patches.push_back(std::move(p));
  };
  for (auto s : seeds) add_patch(s);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!covered[i]) add_patch(i);
  }
  return patches;
}

/// Concatenates the patches and reduces them to target_count points by fps.
inline PointCloud merge_patches(const std::vector<PointCloud>& patches, std::size_t target_count) {
  std::vector<Point3> all;
  for (const auto& p : patches) all.insert(all.end(), p.begin(), p.end());
  if (all.size() < target_count) {
    throw ValidationError("sampling", "merge: " + std::to_string(all.size()) + " points available, " +
                                          std::to_string(target_count) + " requested");
  }
  const PointCloud concat(std::move(all));
  return select(concat, fps(concat, target_count, 0));
}

}  // namespace pcup
