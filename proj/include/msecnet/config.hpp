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

#include <cstddef>
#include <string>
#include <vector>

#include "msecnet/error.hpp"

namespace msecnet::model {

struct BackboneConfig {
  std::size_t stages = 4;
  std::size_t first_dim = 64;
  std::size_t k_backbone = 16;
  std::size_t d_out = 128;

  std::size_t stage_dim(std::size_t s) const { return first_dim << s; }  // s is 0-based
};

enum class Interpolation { kDirect, kGradual };

struct MsecConfig {
  std::size_t s_used = 4;
  std::size_t d_fused = 1024;
  std::size_t k_edge = 9;
  bool use_stream = true;
  bool use_space_transform = true;
  bool use_channel_transform = true;
  bool use_adaptivity = true;
  bool use_conditioning = true;  // false: the backbone output is dropped from γ's input only
  bool edge_only = false;        // true: the backbone output is dropped from conditioning entirely
  Interpolation interpolation = Interpolation::kDirect;
};

struct ModelConfig {
  BackboneConfig backbone;
  MsecConfig msec;

  void validate() const {
    const auto& b = backbone;
    MSECNET_REQUIRE(b.stages >= 1 && b.stages <= 8, ErrorKind::kInvalidArgument, "stages must be in [1, 8]");
    MSECNET_REQUIRE(b.first_dim > 0 && b.d_out > 0 && b.k_backbone > 0, ErrorKind::kInvalidArgument,
            "backbone widths and k must be positive");
    MSECNET_REQUIRE(msec.s_used >= 1 && msec.s_used <= b.stages, ErrorKind::kInvalidArgument,
            "s_used must be in [1, stages]");
    MSECNET_REQUIRE(msec.d_fused > 0 && msec.k_edge > 0, ErrorKind::kInvalidArgument,
            "d_fused and k_edge must be positive");
  }
};

/// Point count per stage: floor-halving after each subsampling.
inline std::vector<std::size_t> stage_point_counts(std::size_t n, std::size_t stages) {
  std::vector<std::size_t> counts{n};
  for (std::size_t s = 1; s < stages; ++s) counts.push_back(counts.back() / 2);
  return counts;
}

/// Full-size network (d_fused 1024, 4 stages from 64 channels, N = 700).
inline ModelConfig full_config() { return ModelConfig{}; }

/// Smallest configuration used for exhaustive gradient checks (N = 32).
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone.first_dim = 8;
  c.backbone.k_backbone = 4;
  c.backbone.d_out = 16;
  c.msec.d_fused = 64;
  c.msec.k_edge = 3;
  return c;
}

/// Desk-scale configuration for CPU training runs (N = 128).
inline ModelConfig desk_config() {
  ModelConfig c;
  c.backbone.first_dim = 16;
  c.backbone.d_out = 128;
  c.msec.d_fused = 128;
  return c;
}

}  // namespace msecnet::model
