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
#include <memory>
#include <span>
#include <vector>

#include "msecnet/ad/gradcheck.hpp"
#include "msecnet/data/synth.hpp"
#include "msecnet/losses.hpp"
#include "msecnet/network.hpp"
#include "msecnet/structure.hpp"
#include "msecnet/train.hpp"

namespace msecnet::check {

/// A network, a fixed batch of patches from a synthetic crease, and the
/// total loss on them as a closure.
struct GradCheckProblem {
  std::unique_ptr<model::Network> net;
  model::PatchGeometry geometry;
  ad::Tensor gt;

  ad::LossClosure closure() const {
    return [this](ad::Tape& t) {
      const auto out = net->forward(t, geometry);
      return train::total_loss(t, out.normals, gt).total;
    };
  }
};

inline GradCheckProblem make_gradcheck_problem(const model::ModelConfig& cfg, std::size_t n, std::size_t patches,
                                               std::uint64_t seed) {
  MSECNET_REQUIRE(patches > 0, ErrorKind::kInvalidArgument, "need at least one patch");
  GradCheckProblem p;
  p.net = std::make_unique<model::Network>(cfg, seed);
  const std::size_t points = std::max<std::size_t>(400, 4 * n);
  const geom::PointCloud cloud = data::synth_shape({data::ShapeKind::kDihedral, 70.0}, points, seed + 1);
  const std::vector<train::TrainShape> shapes{train::TrainShape(cloud)};
  std::vector<train::PatchItem> items;
  for (std::size_t b = 0; b < patches; ++b) items.push_back({0, (b * 37) % points, geom::Mat3::Identity()});
  train::Batch batch = train::make_batch(shapes, std::move(items), n, cfg);
  p.geometry = std::move(batch.geometry);
  p.gt = std::move(batch.gt);
  return p;
}

/// Running statistics are set to the batch's own statistics first, then
/// every learnable scalar is checked with batch norm in fixed-statistics mode.
inline ad::GradCheckReport run_gradcheck(GradCheckProblem& p, const ad::GradCheckOptions& options = {}) {
  const auto closure = p.closure();
  ad::calibrate_running_stats(closure, p.net->params());
  return ad::grad_check(closure, p.net->params(), options);
}

}  // namespace msecnet::check
