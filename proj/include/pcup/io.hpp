// ASCII point cloud (XYZ, PLY) and mesh (OFF) readers and writers.
#pragma once

#include "pcup/core.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace pcup::io {

enum class CloudFormat { xyz, ply };

inline CloudFormat format_from_path(const std::string& path) {
  auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "ply") return CloudFormat::ply;
  return CloudFormat::xyz;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_number(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

inline Point3 parse_point(const std::vector<std::string_view>& toks, std::size_t offset_x, std::size_t offset_y,
                          std::size_t offset_z, const char* module, std::size_t line_no) {
  double v[3];
  const std::size_t offs[3] = {offset_x, offset_y, offset_z};
  for (int c = 0; c < 3; ++c) {
    if (offs[c] >= toks.size()) throw ParseError(module, line_no, "expected at least " + std::to_string(offs[c] + 1) + " columns");
    if (!parse_number(toks[offs[c]], v[c])) {
      throw ParseError(module, line_no, "cannot parse number '" + std::string(toks[offs[c]]) + "'");
    }
    if (!std::isfinite(v[c])) throw ParseError(module, line_no, "non-finite coordinate");
  }
  return Point3(static_cast<real>(v[0]), static_cast<real>(v[1]), static_cast<real>(v[2]));
}

inline std::string format_point(const Point3& p) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", static_cast<double>(p.x()), static_cast<double>(p.y()),
                static_cast<double>(p.z()));
  return buf;
}

inline std::ifstream open_in(const std::string& path, const char* module) {
  std::ifstream in(path);
  if (!in) throw IoError(module, "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, const char* module) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(module, "cannot open '" + path + "' for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::string& path, const char* module) {
  out.flush();
  if (!out) throw IoError(module, "write to '" + path + "' failed");
}

}  // namespace detail

/// Whitespace separated `x y z [extra...]` per line. Blank lines and lines
/// starting with '#' are skipped.
inline PointCloud read_xyz(std::istream& in) {
  std::vector<Point3> pts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    pts.push_back(detail::parse_point(toks, 0, 1, 2, "xyz", line_no));
  }
  if (pts.empty()) throw EmptyInputError("xyz", "no points in input");
  return PointCloud(std::move(pts));
}

inline void write_xyz(const PointCloud& cloud, std::ostream& out, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  for (const auto& p : cloud) out << detail::format_point(p);
}

/// ASCII PLY; only the vertex element is read, other elements are skipped.
inline PointCloud read_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || detail::split_ws(line).empty() || detail::split_ws(line)[0] != "ply") {
    if (line_no == 0) throw EmptyInputError("ply", "empty file");
    throw ParseError("ply", line_no, "missing 'ply' magic");
  }

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
  };
  std::vector<Element> elements;
  bool ascii = false;
  bool header_done = false;
  while (next()) {
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "format") {
      if (toks.size() < 2 || toks[1] != "ascii") throw ParseError("ply", line_no, "only ASCII PLY is supported");
      ascii = true;
    } else if (toks[0] == "comment" || toks[0] == "obj_info") {
      continue;
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw ParseError("ply", line_no, "malformed element line");
      Element e;
      e.name = std::string(toks[1]);
      double n = 0;
      if (!detail::parse_number(toks[2], n) || n < 0 || n != std::floor(n)) {
        throw ParseError("ply", line_no, "bad element count");
      }
      e.count = static_cast<std::size_t>(n);
      elements.push_back(std::move(e));
    } else if (toks[0] == "property") {
      if (elements.empty()) throw ParseError("ply", line_no, "property before element");
      elements.back().props.emplace_back(toks.back());
    } else if (toks[0] == "end_header") {
      header_done = true;
      break;
    } else {
      throw ParseError("ply", line_no, "unknown header keyword '" + std::string(toks[0]) + "'");
    }
  }
  if (!header_done) throw ParseError("ply", line_no, "missing end_header");
  if (!ascii) throw ParseError("ply", line_no, "missing format line");

  std::vector<Point3> pts;
  for (const auto& e : elements) {
    std::size_t ix = e.props.size(), iy = ix, iz = ix;
    if (e.name == "vertex") {
      for (std::size_t i = 0; i < e.props.size(); ++i) {
        if (e.props[i] == "x") ix = i;
        if (e.props[i] == "y") iy = i;
        if (e.props[i] == "z") iz = i;
      }
      if (ix == e.props.size() || iy == e.props.size() || iz == e.props.size()) {
        throw ParseError("ply", line_no, "vertex element lacks x/y/z properties");
      }
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      if (!next()) throw ParseError("ply", line_no + 1, "unexpected end of file in element '" + e.name + "'");
      if (e.name != "vertex") continue;
      auto toks = detail::split_ws(line);
      pts.push_back(detail::parse_point(toks, ix, iy, iz, "ply", line_no));
    }
  }
  if (pts.empty()) throw EmptyInputError("ply", "no vertices in input");
  return PointCloud(std::move(pts));
}

inline void write_ply(const PointCloud& cloud, std::ostream& out, const std::string& comment = {}) {
  out << "ply\nformat ascii 1.0\n";
  if (!comment.empty()) out << "comment " << comment << '\n';
  out << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : cloud) out << detail::format_point(p);
}

inline PointCloud read_cloud(const std::string& path, CloudFormat format) {
  auto in = detail::open_in(path, format == CloudFormat::ply ? "ply" : "xyz");
  return format == CloudFormat::ply ? read_ply(in) : read_xyz(in);
}

inline PointCloud read_cloud(const std::string& path) { return read_cloud(path, format_from_path(path)); }

inline void write_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format,
                        const std::string& comment = {}) {
  const char* module = format == CloudFormat::ply ? "ply" : "xyz";
  if (cloud.empty()) throw EmptyInputError(module, "refusing to write an empty cloud");
  auto out = detail::open_out(path, module);
  if (format == CloudFormat::ply) {
    write_ply(cloud, out, comment);
  } else {
    write_xyz(cloud, out, comment);
  }
  detail::finish_write(out, path, module);
}

inline void write_cloud(const PointCloud& cloud, const std::string& path, const std::string& comment = {}) {
  write_cloud(cloud, path, format_from_path(path), comment);
}

/// OFF reader. Polygons with more than three vertices are fan-triangulated.
inline TriMesh read_off(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  // Returns the next non-blank, non-comment line split into tokens.
  auto next_tokens = [&]() -> std::vector<std::string_view> {
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto toks = detail::split_ws(line);
      if (!toks.empty()) return toks;
    }
    return {};
  };
  auto as_count = [&](std::string_view tok) {
    double v = 0;
    if (!detail::parse_number(tok, v) || v < 0 || v != std::floor(v)) {
      throw ParseError("off", line_no, "expected a non-negative integer, got '" + std::string(tok) + "'");
    }
    return static_cast<std::size_t>(v);
  };

  auto toks = next_tokens();
  if (toks.empty()) throw EmptyInputError("off", "empty file");
  if (toks[0] != "OFF") throw ParseError("off", line_no, "missing OFF header");
  toks.erase(toks.begin());
  if (toks.empty()) toks = next_tokens();
  if (toks.size() < 2) throw ParseError("off", line_no, "expected vertex and face counts");
  const std::size_t nv = as_count(toks[0]);
  const std::size_t nf = as_count(toks[1]);

  TriMesh mesh;
  mesh.vertices.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    auto vt = next_tokens();
    if (vt.empty()) throw ParseError("off", line_no, "unexpected end of file in vertex list");
    mesh.vertices.push_back(detail::parse_point(vt, 0, 1, 2, "off", line_no));
  }
  for (std::size_t f = 0; f < nf; ++f) {
    auto ft = next_tokens();
    if (ft.empty()) throw ParseError("off", line_no, "unexpected end of file in face list");
    const std::size_t n = as_count(ft[0]);
    if (n < 3 || ft.size() < n + 1) throw ParseError("off", line_no, "malformed face");
    std::vector<std::uint32_t> poly(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = as_count(ft[i + 1]);
      if (idx >= nv) {
        throw ValidationError("off", "line " + std::to_string(line_no) + ": face index " + std::to_string(idx) +
                                         " out of range for " + std::to_string(nv) + " vertices");
      }
      poly[i] = static_cast<std::uint32_t>(idx);
    }
    for (std::size_t i = 1; i + 1 < n; ++i) mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
  }
  mesh.validate();
  return mesh;
}

inline TriMesh read_mesh(const std::string& path) {
  auto in = detail::open_in(path, "off");
  return read_off(in);
}

inline void write_off(const TriMesh& mesh, std::ostream& out) {
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const auto& v : mesh.vertices) out << detail::format_point(v);
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

inline void write_mesh(const TriMesh& mesh, const std::string& path) {
  auto out = detail::open_out(path, "off");
  write_off(mesh, out);
  detail::finish_write(out, path, "off");
}

}  // namespace pcup::io
