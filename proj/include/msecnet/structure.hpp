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
#include <numeric>
#include <span>
#include <vector>

#include "msecnet/ad/tensor.hpp"
#include "msecnet/config.hpp"
#include "msecnet/geom.hpp"

namespace msecnet::model {

using geom::InterpPlan;
using geom::NeighborGraph;
using geom::Vec3;

/// Parameter-free structure of a batch of patches: stage point sets,
/// neighbor graphs, and interpolation plans. Row indices are global over the
/// batch (patch b's rows follow patch b-1's).
struct PatchGeometry {
  std::size_t batch = 0;
  std::vector<std::size_t> stage_points;            // per patch, per stage
  std::vector<std::vector<Vec3>> stage_coords;       // [stage] -> batch * n_s
  std::vector<std::vector<std::size_t>> stage_index;  // [stage] -> batch * n_s, index into stage-1 rows
  ad::Tensor input;                                  // (batch * N) x 3

  std::vector<NeighborGraph> down_graph;   // [s]: stage s+1 queries -> stage s points
  std::vector<NeighborGraph> down_center;  // [s]: stage s+1 point -> its own stage-s row, k = 1
  std::vector<ad::Tensor> down_rel;        // [s]: (batch * n_{s+1}) x k x 3
  std::vector<InterpPlan> up_plan;         // [s]: stage s+1 sources -> stage s targets
  std::vector<InterpPlan> direct_plan;     // [s]: stage s sources -> stage 1 targets (s >= 1)

  NeighborGraph edge_graph;  // stage-1 graph shared by space transform and edge detection
  ad::Tensor edge_rel;

  std::size_t points_per_patch() const { return stage_points.front(); }
  std::size_t rows(std::size_t s) const { return batch * stage_points[s]; }
};

namespace detail {

inline void append_graph(NeighborGraph& dst, const NeighborGraph& src, std::size_t offset) {
  dst.k = src.k;
  for (std::size_t idx : src.indices) dst.indices.push_back(idx + offset);
  dst.distances.insert(dst.distances.end(), src.distances.begin(), src.distances.end());
}

inline void append_plan(InterpPlan& dst, const InterpPlan& src, std::size_t offset) {
  dst.sources += src.sources;
  for (auto idx : src.indices) {
    for (auto& i : idx) i += offset;
    dst.indices.push_back(idx);
  }
  dst.weights.insert(dst.weights.end(), src.weights.begin(), src.weights.end());
}

inline ad::Tensor relative_positions(const NeighborGraph& g, std::span<const Vec3> points,
                                     std::span<const Vec3> queries) {
  ad::Tensor rel({queries.size(), g.k, 3});
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::size_t m = 0; m < g.k; ++m) {
      const Vec3 d = points[g.indices[q * g.k + m]] - queries[q];
      for (int c = 0; c < 3; ++c) rel[(q * g.k + m) * 3 + c] = d[c];
    }
  return rel;
}

inline void append_rel(ad::Tensor& dst, const ad::Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  ad::Shape shape = dst.shape();
  shape[0] += src.dim(0);
  std::vector<double> v = dst.storage();
  v.insert(v.end(), src.storage().begin(), src.storage().end());
  dst = ad::Tensor(std::move(shape), std::move(v));
}

}  // namespace detail

/// Builds the structure for patches that all have the same point count.
inline PatchGeometry build_geometry(std::span<const std::vector<Vec3>> patches, const ModelConfig& cfg) {
  MSECNET_REQUIRE(!patches.empty(), ErrorKind::kInvalidArgument, "empty patch batch");
  const std::size_t n = patches.front().size();
  const std::size_t stages = cfg.backbone.stages;
  PatchGeometry g;
  g.batch = patches.size();
  g.stage_points = stage_point_counts(n, stages);
  MSECNET_REQUIRE(g.stage_points.back() >= 3, ErrorKind::kInvalidArgument,
          "patch of " + std::to_string(n) + " points leaves fewer than 3 points at the coarsest stage");
  g.stage_coords.resize(stages);
  g.stage_index.resize(stages);
  g.down_graph.resize(stages - 1);
  g.down_center.resize(stages - 1);
  g.down_rel.resize(stages - 1);
  g.up_plan.resize(stages - 1);
  g.direct_plan.resize(stages);
  g.input = ad::Tensor({g.batch * n, 3});

  for (std::size_t b = 0; b < patches.size(); ++b) {
    const auto& pts = patches[b];
    MSECNET_REQUIRE(pts.size() == n, ErrorKind::kShape, "patches in a batch must have equal size");
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) g.input[(b * n + i) * 3 + c] = pts[i][c];

    std::vector<std::vector<Vec3>> coords{pts};
    std::vector<std::vector<std::size_t>> to_first{std::vector<std::size_t>(n)};
    std::iota(to_first[0].begin(), to_first[0].end(), std::size_t{0});
    for (std::size_t s = 0; s + 1 < stages; ++s) {
      const auto picked = geom::farthest_point_sample(coords[s], g.stage_points[s + 1], 0);
      std::vector<Vec3> next;
      std::vector<std::size_t> next_first;
      NeighborGraph center;
      center.k = 1;
      for (std::size_t p : picked) {
        next.push_back(coords[s][p]);
        next_first.push_back(to_first[s][p]);
        center.indices.push_back(p);
        center.distances.push_back(0.0);
      }
      const std::size_t k = std::min(cfg.backbone.k_backbone, coords[s].size());
      const NeighborGraph down = geom::knn(coords[s], next, k);
      detail::append_graph(g.down_graph[s], down, b * g.stage_points[s]);
      detail::append_graph(g.down_center[s], center, b * g.stage_points[s]);
      detail::append_rel(g.down_rel[s], detail::relative_positions(down, coords[s], next));
      detail::append_plan(g.up_plan[s], geom::interp3nn_weights(next, coords[s]),
                          b * g.stage_points[s + 1]);
      coords.push_back(std::move(next));
      to_first.push_back(std::move(next_first));
    }
    for (std::size_t s = 1; s < stages; ++s) {
      detail::append_plan(g.direct_plan[s], geom::interp3nn_weights(coords[s], coords[0]),
                          b * g.stage_points[s]);
    }
    const std::size_t ke = std::min(cfg.msec.k_edge, n);
    const NeighborGraph edge = geom::knn(coords[0], coords[0], ke);
    detail::append_graph(g.edge_graph, edge, b * n);
    detail::append_rel(g.edge_rel, detail::relative_positions(edge, coords[0], coords[0]));
    for (std::size_t s = 0; s < stages; ++s) {
      g.stage_coords[s].insert(g.stage_coords[s].end(), coords[s].begin(), coords[s].end());
      for (std::size_t i : to_first[s]) g.stage_index[s].push_back(i + b * n);
    }
  }
  return g;
}

inline PatchGeometry build_geometry(const std::vector<Vec3>& patch, const ModelConfig& cfg) {
  return build_geometry(std::span<const std::vector<Vec3>>(&patch, 1), cfg);
}

}  // namespace msecnet::model
