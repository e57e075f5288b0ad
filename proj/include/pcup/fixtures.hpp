// Analytic surfaces for synthetic data: uniform-area samplers and meshes.
#pragma once

#include "pcup/core.hpp"
#include "pcup/io.hpp"
#include "pcup/sampling.hpp"
#include "pcup/spatial_index.hpp"
#include "pcup/training.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>

namespace pcup::fixtures {

enum class Shape { sphere, torus, box, line };

inline Shape parse_shape(const std::string& s) {
  if (s == "sphere") return Shape::sphere;
  if (s == "torus") return Shape::torus;
  if (s == "box") return Shape::box;
  if (s == "line") return Shape::line;
  throw Error(ErrorKind::usage, "synth", "unknown shape '" + s + "' (valid: sphere, torus, box, line)");
}

inline const char* to_string(Shape s) {
  switch (s) {
    case Shape::sphere: return "sphere";
    case Shape::torus: return "torus";
    case Shape::box: return "box";
    case Shape::line: return "line";
  }
  return "?";
}

inline constexpr real kTorusMajor = 1;
inline constexpr real kTorusMinor = real(0.3);
inline const Point3 kBoxHalfExtent{1, real(0.75), real(0.5)};

inline Point3 sample_sphere_point(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-9) return (v / len).cast<real>();
  }
}

/// Rejection sampling in (u, v) with acceptance (R + r cos v) / (R + r).
inline Point3 sample_torus_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double big = kTorusMajor, small = kTorusMinor;
  for (;;) {
    const double u = angle(rng), v = angle(rng);
    if (unit(rng) * (big + small) > big + small * std::cos(v)) continue;
    const double ring = big + small * std::cos(v);
    return Point3(static_cast<real>(ring * std::cos(u)), static_cast<real>(ring * std::sin(u)),
                  static_cast<real>(small * std::sin(v)));
  }
}

inline Point3 sample_box_point(std::mt19937_64& rng) {
  const Eigen::Vector3d h = kBoxHalfExtent.cast<double>();
  // face pair areas: normal along x, y, z
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  std::discrete_distribution<int> pick({areas[0], areas[0], areas[1], areas[1], areas[2], areas[2]});
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int face = pick(rng);
  const int axis = face / 2;
  Eigen::Vector3d p(unit(rng) * h.x(), unit(rng) * h.y(), unit(rng) * h.z());
  p[axis] = (face % 2 == 0 ? 1.0 : -1.0) * h[axis];
  return p.cast<real>();
}

inline Point3 sample_line_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  return Point3(static_cast<real>(unit(rng)), 0, 0);
}

inline PointCloud sample(Shape shape, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValidationError("synth", "n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (shape) {
      case Shape::sphere: pts.push_back(sample_sphere_point(rng)); break;
      case Shape::torus: pts.push_back(sample_torus_point(rng)); break;
      case Shape::box: pts.push_back(sample_box_point(rng)); break;
      case Shape::line: pts.push_back(sample_line_point(rng)); break;
    }
  }
  return PointCloud(std::move(pts));
}

/// Subdivided icosahedron projected onto the unit sphere.
inline TriMesh icosphere(int subdivisions) {
  const real t = (1 + std::sqrt(real(5))) / 2;
  TriMesh m;
  for (const Point3& v : {Point3(-1, t, 0), Point3(1, t, 0), Point3(-1, -t, 0), Point3(1, -t, 0), Point3(0, -1, t),
                          Point3(0, 1, t), Point3(0, -1, -t), Point3(0, 1, -t), Point3(t, 0, -1), Point3(t, 0, 1),
                          Point3(-t, 0, -1), Point3(-t, 0, 1)}) {
    m.vertices.push_back(v.normalized());
  }
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mids;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = mids.find(key);
      if (it != mids.end()) return it->second;
      m.vertices.push_back(((m.vertices[a] + m.vertices[b]) / 2).normalized());
      const auto id = static_cast<std::uint32_t>(m.vertices.size() - 1);
      mids.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(m.faces.size() * 4);
    for (const auto& f : m.faces) {
      const auto a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    m.faces = std::move(next);
  }
  return m;
}

inline TriMesh torus_mesh(std::uint32_t segments_major = 96, std::uint32_t segments_minor = 32) {
  TriMesh m;
  for (std::uint32_t i = 0; i < segments_major; ++i) {
    const double u = 2 * std::numbers::pi * i / segments_major;
    for (std::uint32_t j = 0; j < segments_minor; ++j) {
      const double v = 2 * std::numbers::pi * j / segments_minor;
      const double ring = kTorusMajor + kTorusMinor * std::cos(v);
      m.vertices.emplace_back(static_cast<real>(ring * std::cos(u)), static_cast<real>(ring * std::sin(u)),
                              static_cast<real>(kTorusMinor * std::sin(v)));
    }
  }
  auto id = [&](std::uint32_t i, std::uint32_t j) { return (i % segments_major) * segments_minor + (j % segments_minor); };
  for (std::uint32_t i = 0; i < segments_major; ++i) {
    for (std::uint32_t j = 0; j < segments_minor; ++j) {
      m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return m;
}

inline TriMesh box_mesh() {
  TriMesh m;
  const Point3 h = kBoxHalfExtent;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1 ? 1 : -1) * h.x(), (i & 2 ? 1 : -1) * h.y(), (i & 4 ? 1 : -1) * h.z());
  }
  const std::array<std::array<std::uint32_t, 4>, 6> quads = {{{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                                             {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

inline std::optional<TriMesh> mesh(Shape shape) {
  switch (shape) {
    case Shape::sphere: return icosphere(4);
    case Shape::torus: return torus_mesh();
    case Shape::box: return box_mesh();
    case Shape::line: return std::nullopt;
  }
  return std::nullopt;
}

/// A training/evaluation pair cut from a low-res and a high-res sampling of
/// the same surface, normalized by the low-res patch's transform.
struct FixturePatch {
  TrainSample sample;
  NormalizeTransform transform;
};

/// `count` patch pairs: seeds by fps over `low`, low patch = low_patch_size
/// nearest low-res points, gt patch = low_patch_size * rate nearest high-res points.
inline std::vector<FixturePatch> make_patch_pairs(const PointCloud& low, const PointCloud& high, std::size_t count,
                                                  std::size_t low_patch_size, std::size_t rate) {
  const std::size_t high_patch_size = low_patch_size * rate;
  if (low_patch_size > low.size() || high_patch_size > high.size()) {
    throw ValidationError("synth", "patch sizes exceed the fixture clouds");
  }
  const SpatialIndex low_index(low), high_index(high);
  std::vector<FixturePatch> out;
  for (auto seed : fps(low, std::min(count, low.size()), 0)) {
    std::vector<Point3> lp, hp;
    for (const auto& nb : low_index.knn(low[seed], low_patch_size)) lp.push_back(low[nb.index]);
    for (const auto& nb : high_index.knn(low[seed], high_patch_size)) hp.push_back(high[nb.index]);
    auto [lnorm, t] = normalize(PointCloud(std::move(lp)));
    FixturePatch fp;
    fp.sample.low = std::move(lnorm);
    fp.sample.gt = t.apply(PointCloud(std::move(hp)));
    fp.transform = t;
    out.push_back(std::move(fp));
  }
  return out;
}

/// Training patches for `shape`: independent low/high samplings with seeds
/// derived from `seed`.
inline std::vector<TrainSample> synthetic_dataset(Shape shape, std::size_t patches, std::uint64_t seed,
                                                  std::size_t low_patch_size = 256, std::size_t rate = 4) {
  const std::size_t n_low = std::max(low_patch_size, patches * low_patch_size / 2);
  const PointCloud low = sample(shape, n_low, seed * 2 + 1);
  const PointCloud high = sample(shape, n_low * rate, seed * 2 + 2);
  std::vector<TrainSample> out;
  for (auto& fp : make_patch_pairs(low, high, patches, low_patch_size, rate)) out.push_back(std::move(fp.sample));
  return out;
}

/// Training pairs from `dir/low/*.xyz` and `dir/high/*.xyz`, matched by file
/// name. A pair with more than `low_patch_size` low-res points is cut into
/// patches; a smaller pair is used whole, normalized by its low-res cloud.
inline std::vector<TrainSample> load_dataset(const std::string& dir, std::size_t low_patch_size, std::size_t rate) {
  namespace fs = std::filesystem;
  const fs::path low_dir = fs::path(dir) / "low", high_dir = fs::path(dir) / "high";
  if (!fs::is_directory(low_dir) || !fs::is_directory(high_dir)) {
    throw IoError("training", "dataset '" + dir + "' needs low/ and high/ subdirectories");
  }
  std::vector<fs::path> names;
  for (const auto& e : fs::directory_iterator(low_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".xyz") names.push_back(e.path().filename());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw EmptyInputError("training", "no low/*.xyz files in '" + dir + "'");
  std::vector<TrainSample> out;
  for (const auto& name : names) {
    if (!fs::exists(high_dir / name)) {
      throw IoError("training", "no high-res partner for '" + name.string() + "' in '" + high_dir.string() + "'");
    }
    const PointCloud low = io::read_cloud((low_dir / name).string());
    const PointCloud high = io::read_cloud((high_dir / name).string());
    if (low.size() > low_patch_size && high.size() >= low_patch_size * rate) {
      const std::size_t count = std::max<std::size_t>(1, 2 * low.size() / low_patch_size);
      for (auto& fp : make_patch_pairs(low, high, count, low_patch_size, rate)) out.push_back(std::move(fp.sample));
    } else {
      auto [lnorm, t] = normalize(low);
      out.push_back({std::move(lnorm), t.apply(high)});
    }
  }
  return out;
}

}  // namespace pcup::fixtures
