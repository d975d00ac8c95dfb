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

#include <optional>
#include <string>
#include <vector>

#include "msecnet/backbone.hpp"
#include "msecnet/config.hpp"
#include "msecnet/layers.hpp"
#include "msecnet/structure.hpp"

namespace msecnet::model {

/// Intermediate features of the edge-conditioning stream (all N x width).
struct EdgeFeatures {
  Var fused, space, spch;  // space/spch are invalid when the transform is disabled
  Var ms, edges, conditioned;
};

/// Two LBRs applied per neighbor on [p_j - p_i || f_j], then max-pooled.
struct SpaceTransform {
  Linear edge;
  BatchNorm edge_norm;
  Lbr mix;

  Var operator()(Tape& t, Var f, const PatchGeometry& g) const {
    Var h = ad::edge_linear(t, f, t.constant(g.edge_rel), g.edge_graph, t.param(edge.weight),
                            t.param(edge.bias));
    h = mix(t, ad::relu(t, edge_norm(t, h)));
    return ad::pool_neighborhood(t, h, ad::PoolMode::kMax);
  }
};

/// Umbrella operator on multi-scale features with learned per-pair (θ) and
/// post-aggregation (φ) transforms. Without adaptivity it is the raw mean of
/// neighbor differences.
struct AdaptiveLaplacian {
  bool adaptive = true;
  Linear pair;  // first θ layer, applied to f_j - f_i
  BatchNorm pair_norm;
  Lbr pair_mix;
  Lbr post0, post1;

  Var operator()(Tape& t, Var f, const NeighborGraph& graph) const {
    if (!adaptive) {
      return ad::pool_neighborhood(t, ad::pairwise_diff(t, f, graph), ad::PoolMode::kMean);
    }
    Var h = ad::diff_linear(t, f, graph, t.param(pair.weight), t.param(pair.bias));
    h = pair_mix(t, ad::relu(t, pair_norm(t, h)));
    Var m = ad::pool_neighborhood(t, h, ad::PoolMode::kMean);
    return post1(t, post0(t, m));
  }
};

class MsecStream {
 public:
  MsecStream() = default;
  MsecStream(ParameterStore& store, const ModelConfig& cfg) : cfg_(cfg.msec), d_out_(cfg.backbone.d_out) {
    const auto& b = cfg.backbone;
    const std::size_t d = cfg_.d_fused;
    std::size_t fused_in = 0;
    for (std::size_t s = 0; s < cfg_.s_used; ++s) fused_in += b.stage_dim(s);
    fuse_ = Lbr::create(store, "msec.fuse", fused_in, d);
    if (cfg_.use_space_transform) {
      space_.edge = Linear::create(store, "msec.space0.linear", d + 3, d);
      space_.edge_norm = BatchNorm::create(store, "msec.space0.bn", d);
      space_.mix = Lbr::create(store, "msec.space1", d, d);
    }
    if (cfg_.use_channel_transform) {
      channel0_ = Lbr::create(store, "msec.channel0", d, d);
      channel1_ = Lbr::create(store, "msec.channel1", d, d);
    }
    laplacian_.adaptive = cfg_.use_adaptivity;
    if (cfg_.use_adaptivity) {
      laplacian_.pair = Linear::create(store, "msec.edge_pair0.linear", d, d);
      laplacian_.pair_norm = BatchNorm::create(store, "msec.edge_pair0.bn", d);
      laplacian_.pair_mix = Lbr::create(store, "msec.edge_pair1", d, d);
      laplacian_.post0 = Lbr::create(store, "msec.edge_post0", d, d);
      laplacian_.post1 = Lbr::create(store, "msec.edge_post1", d, d);
    }
    const bool with_backbone = cfg_.use_conditioning && !cfg_.edge_only;
    condition_ = Lbr::create(store, "msec.condition", (with_backbone ? d_out_ : 0) + d, d_out_);
  }

  const MsecConfig& config() const { return cfg_; }
  const Lbr& fuse_layer() const { return fuse_; }
  const SpaceTransform& space_layer() const { return space_; }
  const Lbr& condition_layer() const { return condition_; }
  const Lbr& channel_layer(int i) const { return i == 0 ? channel0_ : channel1_; }
  const AdaptiveLaplacian& laplacian() const { return laplacian_; }

  /// Stage features brought to input resolution, one per used scale.
  std::vector<Var> distribute_scales(Tape& t, const PatchGeometry& g, const ScalePyramid& p) const {
    std::vector<Var> out{p.features[0]};
    for (std::size_t s = 1; s < cfg_.s_used; ++s) {
      if (cfg_.interpolation == Interpolation::kDirect) {
        out.push_back(ad::interpolate(t, p.features[s], g.direct_plan[s]));
      } else {
        Var h = p.features[s];
        for (std::size_t r = s; r-- > 0;) h = ad::interpolate(t, h, g.up_plan[r]);
        out.push_back(h);
      }
    }
    return out;
  }

  Var fuse_pointwise(Tape& t, std::span<const Var> distributed) const {
    return fuse_(t, ad::concat(t, distributed));
  }

  Var space_transform(Tape& t, Var fused, const PatchGeometry& g) const { return space_(t, fused, g); }

  Var channel_transform(Tape& t, Var f) const { return channel1_(t, channel0_(t, f)); }

  Var adaptive_laplacian(Tape& t, Var ms, const PatchGeometry& g) const {
    return laplacian_(t, ms, g.edge_graph);
  }

  Var edge_condition(Tape& t, Var backbone_out, Var edges) const {
    if (cfg_.edge_only) return condition_(t, edges);
    Var gamma_in = cfg_.use_conditioning ? ad::concat(t, {backbone_out, edges}) : edges;
    return ad::add(t, backbone_out, condition_(t, gamma_in));
  }

  EdgeFeatures operator()(Tape& t, const PatchGeometry& g, const ScalePyramid& p, Var backbone_out) const {
    EdgeFeatures e;
    const auto dist = distribute_scales(t, g, p);
    e.fused = fuse_pointwise(t, dist);
    Var branch;
    if (cfg_.use_space_transform) {
      e.space = space_transform(t, e.fused, g);
      branch = e.space;
    }
    if (cfg_.use_channel_transform) {
      e.spch = channel_transform(t, cfg_.use_space_transform ? e.space : e.fused);
      branch = e.spch;
    }
    e.ms = branch.valid() ? ad::add(t, e.fused, branch) : e.fused;
    e.edges = adaptive_laplacian(t, e.ms, g);
    e.conditioned = edge_condition(t, backbone_out, e.edges);
    return e;
  }

 private:
  MsecConfig cfg_;
  std::size_t d_out_ = 0;
  Lbr fuse_;
  SpaceTransform space_;
  Lbr channel0_, channel1_;
  AdaptiveLaplacian laplacian_;
  Lbr condition_;
};

}  // namespace msecnet::model
