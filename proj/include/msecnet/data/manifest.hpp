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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "msecnet/data/io.hpp"
#include "msecnet/data/synth.hpp"
#include "msecnet/error.hpp"

namespace msecnet::data {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct ShapeRecord {
  std::string name;
  std::string xyz_path;
  std::string normals_path;
  std::optional<std::string> pidx_path;
  std::optional<std::vector<std::size_t>> edge_band;  // indices, synthetic shapes only
};

struct DatasetManifest {
  std::vector<ShapeRecord> train;
  std::vector<ShapeRecord> test;
};

struct LoadedShape {
  std::string name;
  PointCloud cloud;
  std::optional<std::vector<std::size_t>> pidx;
};

/// Reads and cross-checks every file a record points at.
inline LoadedShape load_shape(const ShapeRecord& rec) {
  LoadedShape out;
  out.name = rec.name;
  out.cloud = read_cloud(rec.xyz_path, rec.normals_path);
  if (rec.pidx_path) {
    out.pidx = read_pidx(*rec.pidx_path);
    for (std::size_t i : *out.pidx) {
      MSECNET_REQUIRE(i < out.cloud.size(), ErrorKind::kConsistency,
              *rec.pidx_path + ": index " + std::to_string(i) + " out of range for " +
                  std::to_string(out.cloud.size()) + " points");
    }
  }
  if (rec.edge_band) {
    std::vector<std::uint8_t> mask(out.cloud.size(), 0);
    for (std::size_t i : *rec.edge_band) {
      MSECNET_REQUIRE(i < mask.size(), ErrorKind::kConsistency,
              rec.name + ": edge band index " + std::to_string(i) + " out of range");
      mask[i] = 1;
    }
    out.cloud.edge_band = std::move(mask);
  }
  out.cloud.validate();
  return out;
}

inline std::vector<LoadedShape> load_shapes(const std::vector<ShapeRecord>& recs) {
  std::vector<LoadedShape> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(load_shape(r));
  return out;
}

namespace detail {

inline std::vector<std::string> read_name_list(const fs::path& list) {
  std::vector<std::string> names;
  for (const auto& line : read_lines(list.string())) {
    const auto toks = split(line);
    if (toks.empty()) continue;
    MSECNET_REQUIRE(toks.size() == 1, ErrorKind::kParse,
            location(list.string(), names.size() + 1, toks[1].column) + ": expected one shape name");
    names.emplace_back(toks[0].text);
  }
  return names;
}

inline ShapeRecord pcpnet_record(const fs::path& root, const std::string& name) {
  ShapeRecord r;
  r.name = name;
  const fs::path xyz = root / (name + ".xyz");
  const fs::path normals = root / (name + ".normals");
  const fs::path pidx = root / (name + ".pidx");
  MSECNET_REQUIRE(fs::exists(xyz), ErrorKind::kConsistency, "listed shape '" + name + "' has no " + xyz.string());
  MSECNET_REQUIRE(fs::exists(normals), ErrorKind::kConsistency,
          "listed shape '" + name + "' has no " + normals.string());
  r.xyz_path = xyz.string();
  r.normals_path = normals.string();
  if (fs::exists(pidx)) r.pidx_path = pidx.string();
  return r;
}

inline std::optional<fs::path> first_match(const fs::path& root, const std::string& prefix) {
  std::vector<fs::path> hits;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string f = e.path().filename().string();
    if (f.rfind(prefix, 0) == 0 && e.path().extension() == ".txt") hits.push_back(e.path());
  }
  if (hits.empty()) return std::nullopt;
  std::sort(hits.begin(), hits.end());
  return hits.front();
}

}  // namespace detail

/// PCPNet directory layout. List files default to the lexicographically first
/// `trainingset_*.txt` and `testset_*.txt` in root.
inline DatasetManifest pcpnet_manifest(const std::string& root_dir,
                                       std::optional<std::string> train_list = std::nullopt,
                                       std::optional<std::string> test_list = std::nullopt) {
  const fs::path root(root_dir);
  MSECNET_REQUIRE(fs::is_directory(root), ErrorKind::kIo, "not a directory: " + root_dir);
  auto resolve = [&](const std::optional<std::string>& given, const std::string& prefix) {
    if (given) return fs::path(*given).is_absolute() ? fs::path(*given) : root / *given;
    auto found = detail::first_match(root, prefix);
    MSECNET_REQUIRE(found.has_value(), ErrorKind::kConsistency, "no " + prefix + "*.txt in " + root_dir);
    return *found;
  };
  DatasetManifest m;
  for (const auto& n : detail::read_name_list(resolve(train_list, "trainingset_")))
    m.train.push_back(detail::pcpnet_record(root, n));
  for (const auto& n : detail::read_name_list(resolve(test_list, "testset_")))
    m.test.push_back(detail::pcpnet_record(root, n));
  return m;
}

// ---- synthetic datasets --------------------------------------------------

struct SyntheticShape {
  std::string name;
  ShapeSpec shape;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  CorruptionSpec corruption;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  std::vector<SyntheticShape> shapes;
};

namespace detail {

/// Integers parsed from text are unsigned when non-negative; values built in
/// code may be signed.
inline bool is_non_negative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

template <typename T>
T field(const Json& obj, const char* key, const std::string& where) {
  MSECNET_REQUIRE(obj.is_object(), ErrorKind::kParse, where + ": expected an object");
  auto it = obj.find(key);
  MSECNET_REQUIRE(it != obj.end(), ErrorKind::kParse, where + ": missing key '" + key + "'");
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    MSECNET_REQUIRE(is_non_negative_integer(*it), ErrorKind::kParse,
                    where + "." + key + ": expected a non-negative integer");
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, where + "." + key + ": " + e.what());
  }
}

template <typename T>
T field_or(const Json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return field<T>(obj, key, where);
}

inline CorruptionSpec parse_corruption(const Json& j, const std::string& where) {
  CorruptionSpec c;
  c.kind = parse_corruption_kind(field<std::string>(j, "kind", where));
  if (c.kind == CorruptionKind::kNoise) {
    c.sigma = field<double>(j, "sigma", where);
    MSECNET_REQUIRE(c.sigma >= 0.0, ErrorKind::kParse, where + ".sigma: must be non-negative");
  }
  c.seed = field_or<std::uint64_t>(j, "seed", 0, where);
  return c;
}

}  // namespace detail

inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kParse, source + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  MSECNET_REQUIRE(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_json_text(text, path);
}

inline Json to_json(const CorruptionSpec& c) {
  Json j{{"kind", to_string(c.kind)}};
  if (c.kind == CorruptionKind::kNoise) j["sigma"] = c.sigma;
  j["seed"] = c.seed;
  return j;
}

/// Schema: {"seed", "split": {"train", "test"}, "shapes": [{"name", "kind",
/// "params"?, "n", "seed", "corruption"?}]}.
inline SyntheticSpec parse_synthetic_spec(const Json& j) {
  SyntheticSpec s;
  s.seed = detail::field<std::uint64_t>(j, "seed", "spec");
  const Json split = detail::field<Json>(j, "split", "spec");
  s.train_count = detail::field<std::size_t>(split, "train", "spec.split");
  s.test_count = detail::field<std::size_t>(split, "test", "spec.split");
  const Json shapes = detail::field<Json>(j, "shapes", "spec");
  MSECNET_REQUIRE(shapes.is_array() && !shapes.empty(), ErrorKind::kParse, "spec.shapes: expected a non-empty array");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::string where = "spec.shapes[" + std::to_string(i) + "]";
    const Json& e = shapes[i];
    SyntheticShape sh;
    sh.name = detail::field<std::string>(e, "name", where);
    MSECNET_REQUIRE(!sh.name.empty() && sh.name.find_first_of("/\\") == std::string::npos, ErrorKind::kParse,
            where + ".name: must be a plain file stem");
    try {
      sh.shape.kind = parse_shape_kind(detail::field<std::string>(e, "kind", where));
    } catch (const Error& err) {
      fail(ErrorKind::kParse, where + ".kind: " + err.what());
    }
    if (e.contains("params")) {
      sh.shape.angle_deg = detail::field_or<double>(e["params"], "angle_deg", sh.shape.angle_deg, where + ".params");
    }
    sh.n = detail::field<std::size_t>(e, "n", where);
    sh.seed = detail::field<std::uint64_t>(e, "seed", where);
    if (e.contains("corruption")) {
      try {
        sh.corruption = detail::parse_corruption(e["corruption"], where + ".corruption");
      } catch (const Error& err) {
        fail(ErrorKind::kParse, err.what());
      }
    }
    for (const auto& prev : s.shapes)
      MSECNET_REQUIRE(prev.name != sh.name, ErrorKind::kParse, where + ".name: duplicate '" + sh.name + "'");
    s.shapes.push_back(sh);
  }
  MSECNET_REQUIRE(s.train_count + s.test_count == s.shapes.size(), ErrorKind::kParse,
          "spec.split: train + test must equal the number of shapes");
  return s;
}

inline Json to_json(const SyntheticSpec& s) {
  Json shapes = Json::array();
  for (const auto& sh : s.shapes) {
    Json e{{"name", sh.name}, {"kind", to_string(sh.shape.kind)}};
    if (sh.shape.kind == ShapeKind::kDihedral) e["params"] = Json{{"angle_deg", sh.shape.angle_deg}};
    e["n"] = sh.n;
    e["seed"] = sh.seed;
    e["corruption"] = to_json(sh.corruption);
    shapes.push_back(e);
  }
  return Json{{"seed", s.seed}, {"split", {{"train", s.train_count}, {"test", s.test_count}}}, {"shapes", shapes}};
}

/// Shape indices of the training split; a seeded shuffle, then sorted.
inline std::vector<std::size_t> synthetic_train_indices(const SyntheticSpec& s) {
  std::vector<std::size_t> order(s.shapes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(s.seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  order.resize(s.train_count);
  std::sort(order.begin(), order.end());
  return order;
}

inline PointCloud generate(const SyntheticShape& sh) {
  return corrupt(synth_shape(sh.shape, sh.n, sh.seed), sh.corruption).cloud;
}

inline Json record_json(const ShapeRecord& r, const fs::path& base) {
  auto rel = [&](const std::string& p) { return fs::path(p).lexically_relative(base).generic_string(); };
  Json j{{"name", r.name}, {"xyz", rel(r.xyz_path)}, {"normals", rel(r.normals_path)}};
  if (r.pidx_path) j["pidx"] = rel(*r.pidx_path);
  if (r.edge_band) j["edge_band"] = *r.edge_band;
  return j;
}

/// Writes `<name>.xyz` and `<name>.normals` per shape and `manifest.json`.
inline DatasetManifest write_synthetic(const SyntheticSpec& s, const std::string& out_dir) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  MSECNET_REQUIRE(fs::is_directory(root), ErrorKind::kIo, "cannot create " + out_dir);
  const auto train_idx = synthetic_train_indices(s);
  DatasetManifest m;
  for (std::size_t i = 0; i < s.shapes.size(); ++i) {
    const auto& sh = s.shapes[i];
    const PointCloud cloud = generate(sh);
    ShapeRecord r;
    r.name = sh.name;
    r.xyz_path = (root / (sh.name + ".xyz")).string();
    r.normals_path = (root / (sh.name + ".normals")).string();
    write_xyz(r.xyz_path, cloud.coords);
    write_normals(r.normals_path, *cloud.normals);
    if (cloud.edge_band) {
      r.edge_band.emplace();
      for (std::size_t p = 0; p < cloud.size(); ++p)
        if ((*cloud.edge_band)[p]) r.edge_band->push_back(p);
    }
    const bool is_train = std::binary_search(train_idx.begin(), train_idx.end(), i);
    (is_train ? m.train : m.test).push_back(std::move(r));
  }
  Json j{{"train", Json::array()}, {"test", Json::array()}};
  for (const auto& r : m.train) j["train"].push_back(record_json(r, root));
  for (const auto& r : m.test) j["test"].push_back(record_json(r, root));
  std::ofstream out(root / "manifest.json");
  MSECNET_REQUIRE(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + (root / "manifest.json").string());
  out << j.dump(1) << "\n";
  MSECNET_REQUIRE(static_cast<bool>(out), ErrorKind::kIo, "write failed for manifest.json");
  return m;
}

/// Loads a manifest.json; paths are relative to its directory.
inline DatasetManifest read_manifest(const std::string& path) {
  const Json j = read_json_file(path);
  const fs::path base = fs::path(path).parent_path();
  DatasetManifest m;
  auto parse_list = [&](const char* key, std::vector<ShapeRecord>& dst) {
    const Json list = detail::field<Json>(j, key, "manifest");
    MSECNET_REQUIRE(list.is_array(), ErrorKind::kParse, std::string("manifest.") + key + ": expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string where = std::string("manifest.") + key + "[" + std::to_string(i) + "]";
      ShapeRecord r;
      r.name = detail::field<std::string>(list[i], "name", where);
      r.xyz_path = (base / detail::field<std::string>(list[i], "xyz", where)).string();
      r.normals_path = (base / detail::field<std::string>(list[i], "normals", where)).string();
      if (list[i].contains("pidx")) r.pidx_path = (base / detail::field<std::string>(list[i], "pidx", where)).string();
      if (list[i].contains("edge_band"))
        r.edge_band = detail::field<std::vector<std::size_t>>(list[i], "edge_band", where);
      MSECNET_REQUIRE(fs::exists(r.xyz_path), ErrorKind::kConsistency, "shape '" + r.name + "': missing " + r.xyz_path);
      MSECNET_REQUIRE(fs::exists(r.normals_path), ErrorKind::kConsistency,
              "shape '" + r.name + "': missing " + r.normals_path);
      dst.push_back(std::move(r));
    }
  };
  parse_list("train", m.train);
  parse_list("test", m.test);
  return m;
}

/// A manifest.json file, or a PCPNet directory with list files.
inline DatasetManifest build_manifest(const std::string& path) {
  if (fs::is_directory(path)) {
    if (fs::exists(fs::path(path) / "manifest.json")) return read_manifest((fs::path(path) / "manifest.json").string());
    return pcpnet_manifest(path);
  }
  return read_manifest(path);
}

}  // namespace msecnet::data
