// Copyright 2026 The msecnet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"

namespace msecnet::data {

using geom::PointCloud;
using geom::Vec3;

namespace detail {

inline std::string location(const std::string& path, std::size_t line, std::size_t column) {
  return path + ":" + std::to_string(line) + ":" + std::to_string(column);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  MSECNET_REQUIRE(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
  return lines;
}

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> split(std::string_view line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i == line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

template <typename T>
T parse_number(const Token& tok, const std::string& path, std::size_t line) {
  T value{};
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    fail(ErrorKind::kParse, location(path, line, tok.column) + ": expected a number, found '" +
                                std::string(tok.text) + "'");
  }
  return value;
}

inline std::vector<Vec3> read_triples(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<Vec3> out;
  out.reserve(lines.size());
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto toks = split(lines[l]);
    if (toks.size() != 3) {
      const std::size_t col = toks.size() > 3 ? toks[3].column : lines[l].size() + 1;
      fail(ErrorKind::kParse, location(path, l + 1, col) + ": expected 3 values, found " +
                                  std::to_string(toks.size()));
    }
    Vec3 v;
    for (int c = 0; c < 3; ++c) {
      v[c] = parse_number<double>(toks[static_cast<std::size_t>(c)], path, l + 1);
      if (!std::isfinite(v[c])) {
        fail(ErrorKind::kParse, location(path, l + 1, toks[static_cast<std::size_t>(c)].column) +
                                    ": non-finite value");
      }
    }
    out.push_back(v);
  }
  return out;
}

inline void write_triples(const std::string& path, const std::vector<Vec3>& rows) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  MSECNET_REQUIRE(f != nullptr, ErrorKind::kIo, "cannot write " + path);
  for (const Vec3& v : rows) std::fprintf(f, "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
  const bool ok = std::ferror(f) == 0;
  MSECNET_REQUIRE(std::fclose(f) == 0 && ok, ErrorKind::kIo, "write failed for " + path);
}

}  // namespace detail

/// `.xyz`: one point per line, three whitespace-separated decimals.
inline std::vector<Vec3> read_xyz(const std::string& path) { return detail::read_triples(path); }

/// `.normals`: same layout as `.xyz`; values are not renormalized.
inline std::vector<Vec3> read_normals(const std::string& path) { return detail::read_triples(path); }

/// `.pidx`: one non-negative integer index per line.
inline std::vector<std::size_t> read_pidx(const std::string& path) {
  const auto lines = detail::read_lines(path);
  std::vector<std::size_t> out;
  out.reserve(lines.size());
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto toks = detail::split(lines[l]);
    if (toks.size() != 1) {
      const std::size_t col = toks.size() > 1 ? toks[1].column : 1;
      fail(ErrorKind::kParse, detail::location(path, l + 1, col) + ": expected 1 index, found " +
                                  std::to_string(toks.size()));
    }
    out.push_back(detail::parse_number<std::size_t>(toks[0], path, l + 1));
  }
  return out;
}

/// 17 significant digits; round-trips every double.
inline void write_xyz(const std::string& path, const std::vector<Vec3>& coords) {
  detail::write_triples(path, coords);
}

inline void write_normals(const std::string& path, const std::vector<Vec3>& normals) {
  detail::write_triples(path, normals);
}

inline void write_pidx(const std::string& path, const std::vector<std::size_t>& indices) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  MSECNET_REQUIRE(f != nullptr, ErrorKind::kIo, "cannot write " + path);
  for (std::size_t i : indices) std::fprintf(f, "%zu\n", i);
  const bool ok = std::ferror(f) == 0;
  MSECNET_REQUIRE(std::fclose(f) == 0 && ok, ErrorKind::kIo, "write failed for " + path);
}

/// Coordinates plus optional sibling normals; counts must agree.
inline PointCloud read_cloud(const std::string& xyz_path,
                             const std::optional<std::string>& normals_path = std::nullopt) {
  PointCloud cloud;
  cloud.coords = read_xyz(xyz_path);
  MSECNET_REQUIRE(!cloud.coords.empty(), ErrorKind::kParse, xyz_path + ": no points");
  if (normals_path) {
    auto normals = read_normals(*normals_path);
    MSECNET_REQUIRE(normals.size() == cloud.coords.size(), ErrorKind::kConsistency,
            *normals_path + ": " + std::to_string(normals.size()) + " normals for " +
                std::to_string(cloud.coords.size()) + " points in " + xyz_path);
    cloud.normals = std::move(normals);
  }
  return cloud;
}

}  // namespace msecnet::data
