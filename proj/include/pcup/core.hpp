// Core point, cloud and mesh types shared by every pcup module.
#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pcup {

#ifdef PCUP_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Point3 = Eigen::Matrix<real, 3, 1>;
using Vec3 = Point3;
using Matrix = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors. Every module throws a subclass of pcup::Error; the CLI maps the
// category to an exit code.
// ---------------------------------------------------------------------------

enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), kind_(kind), module_(module) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

/// Malformed file contents; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& module, std::size_t line, const std::string& what)
      : Error(ErrorKind::data, module,
              (line > 0 ? "line " + std::to_string(line) + ": " : std::string{}) + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  IoError(const std::string& module, const std::string& what) : Error(ErrorKind::data, module, what) {}
};

class EmptyInputError : public Error {
 public:
  EmptyInputError(const std::string& module, const std::string& what)
      : Error(ErrorKind::data, module, what) {}
};

class ValidationError : public Error {
 public:
  ValidationError(const std::string& module, const std::string& what)
      : Error(ErrorKind::data, module, what) {}
};

class DegenerateInputError : public Error {
 public:
  DegenerateInputError(const std::string& module, const std::string& what)
      : Error(ErrorKind::data, module, what) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& module, const std::string& what)
      : Error(ErrorKind::numeric, module, what) {}
};

// ---------------------------------------------------------------------------

inline bool is_finite(const Point3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

/// Squared Euclidean distance, evaluated in a fixed operation order so that
/// every module (and the brute-force test oracles) produce identical bits.
inline real squared_distance(const Point3& a, const Point3& b) {
  const real dx = a.x() - b.x();
  const real dy = a.y() - b.y();
  const real dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

inline real distance(const Point3& a, const Point3& b) { return std::sqrt(squared_distance(a, b)); }

/// Ordered point set with optional per-point feature rows of uniform width.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> points) : points_(std::move(points)) {}
  PointCloud(std::vector<Point3> points, Matrix features)
      : points_(std::move(points)), features_(std::move(features)) {
    if (features_->rows() != static_cast<Eigen::Index>(points_.size())) {
      throw ValidationError("pointcloud", "feature row count " + std::to_string(features_->rows()) +
                                              " != point count " + std::to_string(points_.size()));
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }

  const Point3& operator[](std::size_t i) const { return points_[i]; }
  Point3& operator[](std::size_t i) { return points_[i]; }

  const std::vector<Point3>& points() const noexcept { return points_; }
  std::vector<Point3>& points() noexcept { return points_; }

  bool has_features() const noexcept { return features_.has_value(); }
  const Matrix& features() const { return features_.value(); }

  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  void push_back(const Point3& p) {
    if (features_) throw ValidationError("pointcloud", "push_back on a cloud with features");
    points_.push_back(p);
  }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    if (a.points_ != b.points_) return false;
    if (a.features_.has_value() != b.features_.has_value()) return false;
    return !a.features_ || *a.features_ == *b.features_;
  }

 private:
  std::vector<Point3> points_;
  std::optional<Matrix> features_;
};

/// N x 3 row-major copy of the coordinates.
inline Matrix to_matrix(const PointCloud& cloud) {
  Matrix m(static_cast<Eigen::Index>(cloud.size()), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = cloud[i].transpose();
  return m;
}

using Face = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Point3> vertices;
  std::vector<Face> faces;

  /// Throws ValidationError on out-of-range or fully degenerate faces.
  void validate() const {
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (auto idx : faces[f]) {
        if (idx >= vertices.size()) {
          throw ValidationError("mesh", "face " + std::to_string(f) + " references vertex " +
                                            std::to_string(idx) + " but mesh has " +
                                            std::to_string(vertices.size()) + " vertices");
        }
      }
      if (faces[f][0] == faces[f][1] && faces[f][1] == faces[f][2]) {
        throw ValidationError("mesh", "face " + std::to_string(f) + " is degenerate");
      }
    }
  }
};

/// Maps p to (p - centroid) / scale.
struct NormalizeTransform {
  Point3 centroid = Point3::Zero();
  real scale = 1;

  Point3 apply(const Point3& p) const { return (p - centroid) / scale; }
  Point3 invert(const Point3& p) const { return p * scale + centroid; }

  PointCloud apply(const PointCloud& c) const {
    std::vector<Point3> out;
    out.reserve(c.size());
    for (const auto& p : c) out.push_back(apply(p));
    return PointCloud(std::move(out));
  }

  TriMesh apply(const TriMesh& m) const {
    TriMesh out = m;
    for (auto& v : out.vertices) v = apply(v);
    return out;
  }

  static NormalizeTransform identity() { return {}; }
};

/// Centers the cloud at its centroid and scales it into the unit ball.
inline std::pair<PointCloud, NormalizeTransform> normalize(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyInputError("normalize", "cloud is empty");
  Eigen::Matrix<double, 3, 1> sum = Eigen::Matrix<double, 3, 1>::Zero();
  for (const auto& p : cloud) sum += p.cast<double>();
  NormalizeTransform t;
  t.centroid = (sum / static_cast<double>(cloud.size())).cast<real>();
  real max_sq = 0;
  for (const auto& p : cloud) max_sq = std::max(max_sq, squared_distance(p, t.centroid));
  if (!(max_sq > 0)) throw DegenerateInputError("normalize", "all points are identical; scale would be 0");
  t.scale = std::sqrt(max_sq);
  return {t.apply(cloud), t};
}

inline PointCloud denormalize(const PointCloud& cloud, const NormalizeTransform& t) {
  std::vector<Point3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(t.invert(p));
  return PointCloud(std::move(out));
}

inline Point3 centroid(const PointCloud& cloud) {
  Eigen::Matrix<double, 3, 1> sum = Eigen::Matrix<double, 3, 1>::Zero();
  for (const auto& p : cloud) sum += p.cast<double>();
  return (sum / static_cast<double>(std::max<std::size_t>(cloud.size(), 1))).cast<real>();
}

}  // namespace pcup
