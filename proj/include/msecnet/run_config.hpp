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

#include <cstdint>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "msecnet/config.hpp"
#include "msecnet/data/manifest.hpp"
#include "msecnet/data/synth.hpp"
#include "msecnet/error.hpp"
#include "msecnet/train.hpp"

namespace msecnet::run {

using Json = nlohmann::ordered_json;

namespace detail {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  MSECNET_REQUIRE(j.is_object(), ErrorKind::kParse, where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    MSECNET_REQUIRE(allowed.contains(k), ErrorKind::kParse, where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    MSECNET_REQUIRE(data::detail::is_non_negative_integer(j.at(key)), ErrorKind::kParse,
                    where + "." + key + ": expected a non-negative integer");
  }
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline model::ModelConfig model_preset(const std::string& name) {
  if (name == "full") return model::full_config();
  if (name == "desk") return model::desk_config();
  if (name == "tiny") return model::tiny_config();
  fail(ErrorKind::kParse, "model.preset: unknown preset '" + name + "' (full, desk, tiny)");
}

/// A preset, then explicit keys on top. Ablation flags use their config names.
inline model::ModelConfig parse_model(const Json& j) {
  detail::check_keys(j, {"preset", "stages", "first_dim", "k_backbone", "d_out", "s_used", "d_fused", "k_edge",
                         "use_stream", "use_space_transform", "use_channel_transform", "use_adaptivity",
                         "use_conditioning", "edge_only", "interpolation"},
                     "model");
  std::string preset = "desk";
  detail::read(j, "preset", preset, "model");
  model::ModelConfig c = model_preset(preset);
  auto& b = c.backbone;
  auto& m = c.msec;
  detail::read(j, "stages", b.stages, "model");
  detail::read(j, "first_dim", b.first_dim, "model");
  detail::read(j, "k_backbone", b.k_backbone, "model");
  detail::read(j, "d_out", b.d_out, "model");
  if (!j.contains("s_used") && j.contains("stages")) m.s_used = b.stages;
  detail::read(j, "s_used", m.s_used, "model");
  detail::read(j, "d_fused", m.d_fused, "model");
  detail::read(j, "k_edge", m.k_edge, "model");
  detail::read(j, "use_stream", m.use_stream, "model");
  detail::read(j, "use_space_transform", m.use_space_transform, "model");
  detail::read(j, "use_channel_transform", m.use_channel_transform, "model");
  detail::read(j, "use_adaptivity", m.use_adaptivity, "model");
  detail::read(j, "use_conditioning", m.use_conditioning, "model");
  detail::read(j, "edge_only", m.edge_only, "model");
  std::string interp = m.interpolation == model::Interpolation::kDirect ? "direct" : "gradual";
  detail::read(j, "interpolation", interp, "model");
  MSECNET_REQUIRE(interp == "direct" || interp == "gradual", ErrorKind::kParse,
          "model.interpolation: expected 'direct' or 'gradual'");
  m.interpolation = interp == "direct" ? model::Interpolation::kDirect : model::Interpolation::kGradual;
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kParse, std::string("model: ") + e.what());
  }
  return c;
}

inline Json to_json(const model::ModelConfig& c) {
  const auto& b = c.backbone;
  const auto& m = c.msec;
  return Json{{"stages", b.stages},
              {"first_dim", b.first_dim},
              {"k_backbone", b.k_backbone},
              {"d_out", b.d_out},
              {"s_used", m.s_used},
              {"d_fused", m.d_fused},
              {"k_edge", m.k_edge},
              {"use_stream", m.use_stream},
              {"use_space_transform", m.use_space_transform},
              {"use_channel_transform", m.use_channel_transform},
              {"use_adaptivity", m.use_adaptivity},
              {"use_conditioning", m.use_conditioning},
              {"edge_only", m.edge_only},
              {"interpolation", m.interpolation == model::Interpolation::kDirect ? "direct" : "gradual"}};
}

inline train::TrainConfig parse_train(const Json& j) {
  detail::check_keys(j, {"preset", "epochs", "batch_patches", "patches_per_shape_per_epoch", "n", "lr_max",
                         "lr_min", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "seed",
                         "augment_rotation"},
                     "train");
  std::string preset = "desk";
  detail::read(j, "preset", preset, "train");
  train::TrainConfig c;
  if (preset == "desk") c = train::desk_train_config();
  else MSECNET_REQUIRE(preset == "full", ErrorKind::kParse, "train.preset: unknown preset '" + preset + "' (full, desk)");
  detail::read(j, "epochs", c.epochs, "train");
  detail::read(j, "batch_patches", c.batch_patches, "train");
  detail::read(j, "patches_per_shape_per_epoch", c.patches_per_shape_per_epoch, "train");
  detail::read(j, "n", c.n, "train");
  detail::read(j, "lr_max", c.lr_max, "train");
  detail::read(j, "lr_min", c.lr_min, "train");
  detail::read(j, "weight_decay", c.adam.weight_decay, "train");
  detail::read(j, "adam_beta1", c.adam.beta1, "train");
  detail::read(j, "adam_beta2", c.adam.beta2, "train");
  detail::read(j, "adam_eps", c.adam.eps, "train");
  detail::read(j, "seed", c.seed, "train");
  detail::read(j, "augment_rotation", c.augment_rotation, "train");
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kParse, std::string("train: ") + e.what());
  }
  return c;
}

inline Json to_json(const train::TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_patches", c.batch_patches},
              {"patches_per_shape_per_epoch", c.patches_per_shape_per_epoch},
              {"n", c.n},
              {"lr_max", c.lr_max},
              {"lr_min", c.lr_min},
              {"weight_decay", c.adam.weight_decay},
              {"adam_beta1", c.adam.beta1},
              {"adam_beta2", c.adam.beta2},
              {"adam_eps", c.adam.eps},
              {"seed", c.seed},
              {"augment_rotation", c.augment_rotation}};
}

inline std::vector<data::CorruptionSpec> parse_corruptions(const Json& j, const std::string& where) {
  MSECNET_REQUIRE(j.is_array() && !j.empty(), ErrorKind::kParse, where + ": expected a non-empty array");
  std::vector<data::CorruptionSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    detail::check_keys(j[i], {"kind", "sigma", "seed"}, w);
    try {
      out.push_back(data::detail::parse_corruption(j[i], w));
    } catch (const Error& e) {
      fail(ErrorKind::kParse, e.what());
    }
  }
  return out;
}

inline Json to_json(const std::vector<data::CorruptionSpec>& cs) {
  Json a = Json::array();
  for (const auto& c : cs) a.push_back(data::to_json(c));
  return a;
}

/// Ablation names accepted by --ablation.
inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"no_msec_stream",   "no_space_transform", "no_channel_transform",
                                              "no_adaptivity",    "no_conditioning",    "edge_only",
                                              "gradual_interpolation"};
  return names;
}

/// Writes the flag an ablation name stands for into the "model" section.
inline void apply_ablation(Json& cfg, const std::string& name) {
  Json& m = cfg["model"];
  if (m.is_null()) m = Json::object();
  if (name == "no_msec_stream") m["use_stream"] = false;
  else if (name == "no_space_transform") m["use_space_transform"] = false;
  else if (name == "no_channel_transform") m["use_channel_transform"] = false;
  else if (name == "no_adaptivity") m["use_adaptivity"] = false;
  else if (name == "no_conditioning") m["use_conditioning"] = false;
  else if (name == "edge_only") m["edge_only"] = true;
  else if (name == "gradual_interpolation") m["interpolation"] = "gradual";
  else fail(ErrorKind::kParse, "unknown ablation '" + name + "'");
}

/// "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
inline void apply_set(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  MSECNET_REQUIRE(eq != std::string::npos && eq > 0, ErrorKind::kParse, "--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    MSECNET_REQUIRE(!key.empty(), ErrorKind::kParse, "--set: empty key segment in '" + path + "'");
    if (node->is_null()) *node = Json::object();
    MSECNET_REQUIRE(node->is_object(), ErrorKind::kParse, "--set: '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace msecnet::run
