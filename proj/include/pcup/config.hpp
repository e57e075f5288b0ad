// Flat key=value configuration files and effective-config provenance.
#pragma once

#include "pcup/core.hpp"
#include "pcup/p2pnet.hpp"

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace pcup::config {

/// Ordered key/value pairs as they appear in a file.
using Entries = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// A bad config file is a usage problem, like a bad flag.
inline Error usage_error(const std::string& origin, std::size_t line, const std::string& what) {
  return Error(ErrorKind::usage, "config", origin + ":" + std::to_string(line) + ": " + what);
}

/// Parses `key = value` lines. Blank lines and lines starting with '#' or ';'
/// are skipped; keys may carry a leading "--". Later duplicates win.
inline Entries parse(std::istream& in, const std::string& origin = "<config>") {
  Entries out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw usage_error(origin, line_no, "expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw usage_error(origin, line_no, "empty key");
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    bool replaced = false;
    for (auto& [k, v] : out) {
      if (k == key) {
        v = value;
        replaced = true;
      }
    }
    if (!replaced) out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline Entries load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::usage, "config", "cannot open config file '" + path + "'");
  return parse(in, path);
}

/// Canonical text of an effective configuration: one `key=value` per line in
/// the given order.
inline std::string render(const Entries& entries) {
  std::string s;
  for (const auto& [k, v] : entries) s += k + "=" + v + "\n";
  return s;
}

/// 16 hex digit FNV-1a hash of the rendered configuration.
inline std::string hash(const Entries& entries) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(render(entries))));
  return buf;
}

}  // namespace pcup::config
