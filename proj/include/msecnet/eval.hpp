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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msecnet/data/manifest.hpp"
#include "msecnet/data/synth.hpp"
#include "msecnet/infer.hpp"

namespace msecnet::infer {

using Json = nlohmann::ordered_json;

struct EvalCell {
  std::string shape;
  std::string corruption;
  std::string method;
  double rmse_deg = 0.0;
  std::optional<double> rmse_edge_deg;
  std::size_t points_evaluated = 0;
};

/// Corruption seeds are offset by the shape's position in the list.
inline data::CorruptionSpec seeded_for_shape(data::CorruptionSpec c, std::size_t shape_index) {
  c.seed = c.seed * 1000003ULL + shape_index;
  return c;
}

/// Every (shape, corruption) cell for every method. RMSE runs over the pidx
/// subset when present (restricted to surviving points), else all points;
/// edge RMSE runs over the evaluated points inside the edge band.
inline std::vector<EvalCell> evaluate_cells(std::span<const NormalEstimator* const> methods,
                                            std::span<const data::LoadedShape> shapes,
                                            std::span<const data::CorruptionSpec> sweep) {
  MSECNET_REQUIRE(!methods.empty() && !shapes.empty() && !sweep.empty(), ErrorKind::kInvalidArgument,
          "evaluation needs methods, shapes and corruptions");
  std::vector<EvalCell> cells;
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const auto& shape = shapes[s];
    MSECNET_REQUIRE(shape.cloud.normals.has_value(), ErrorKind::kInvalidArgument,
            "shape '" + shape.name + "' has no ground truth normals");
    for (const auto& c : sweep) {
      const data::Subset sub = data::corrupt(shape.cloud, seeded_for_shape(c, s));
      std::vector<std::size_t> eval_idx;
      if (shape.pidx) {
        std::vector<std::int64_t> new_index(shape.cloud.size(), -1);
        for (std::size_t i = 0; i < sub.source_indices.size(); ++i)
          new_index[sub.source_indices[i]] = static_cast<std::int64_t>(i);
        for (std::size_t i : *shape.pidx)
          if (new_index[i] >= 0) eval_idx.push_back(static_cast<std::size_t>(new_index[i]));
      } else {
        eval_idx.resize(sub.cloud.size());
        for (std::size_t i = 0; i < eval_idx.size(); ++i) eval_idx[i] = i;
      }
      MSECNET_REQUIRE(!eval_idx.empty(), ErrorKind::kDegenerate,
              "shape '" + shape.name + "' under " + c.label() + " has no evaluated points");
      std::vector<std::size_t> edge_idx;
      if (sub.cloud.edge_band)
        for (std::size_t i : eval_idx)
          if ((*sub.cloud.edge_band)[i]) edge_idx.push_back(i);
      for (const NormalEstimator* m : methods) {
        const std::vector<Vec3> pred = m->estimate(sub.cloud);
        EvalCell cell;
        cell.shape = shape.name;
        cell.corruption = c.label();
        cell.method = m->name();
        cell.rmse_deg = rmse_angle(pred, *sub.cloud.normals, std::span<const std::size_t>(eval_idx));
        if (!edge_idx.empty())
          cell.rmse_edge_deg = rmse_angle(pred, *sub.cloud.normals, std::span<const std::size_t>(edge_idx));
        cell.points_evaluated = eval_idx.size();
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

/// Rows plus per-(method, corruption) and per-method means of the cell RMSEs.
inline Json report_json(const std::vector<EvalCell>& cells) {
  Json rows = Json::array();
  struct Acc {
    double sum = 0.0, edge_sum = 0.0;
    std::size_t n = 0, edge_n = 0;
  };
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, Acc> by_cell;
  std::vector<std::string> method_order;
  std::map<std::string, Acc> by_method;
  for (const auto& c : cells) {
    Json r{{"shape", c.shape}, {"corruption", c.corruption}, {"method", c.method}, {"rmse_deg", c.rmse_deg}};
    if (c.rmse_edge_deg) r["rmse_edge_deg"] = *c.rmse_edge_deg;
    r["points_evaluated"] = c.points_evaluated;
    rows.push_back(r);
    const auto key = std::make_pair(c.method, c.corruption);
    if (!by_cell.contains(key)) order.push_back(key);
    if (!by_method.contains(c.method)) method_order.push_back(c.method);
    for (Acc* a : {&by_cell[key], &by_method[c.method]}) {
      a->sum += c.rmse_deg;
      ++a->n;
      if (c.rmse_edge_deg) {
        a->edge_sum += *c.rmse_edge_deg;
        ++a->edge_n;
      }
    }
  }
  auto fill = [](Json& j, const Acc& a) {
    j["rmse_deg"] = a.sum / static_cast<double>(a.n);
    if (a.edge_n > 0) j["rmse_edge_deg"] = a.edge_sum / static_cast<double>(a.edge_n);
    j["cells"] = a.n;
  };
  Json averages = Json::array();
  for (const auto& key : order) {
    Json j{{"method", key.first}, {"corruption", key.second}};
    fill(j, by_cell[key]);
    averages.push_back(j);
  }
  Json overall = Json::array();
  for (const auto& m : method_order) {
    Json j{{"method", m}};
    fill(j, by_method[m]);
    overall.push_back(j);
  }
  return Json{{"rows", rows}, {"averages", averages}, {"overall", overall}};
}

}  // namespace msecnet::infer
