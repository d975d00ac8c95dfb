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

#include <string>
#include <vector>

#include "msecnet/config.hpp"
#include "msecnet/layers.hpp"
#include "msecnet/structure.hpp"

namespace msecnet::model {

/// One subsampling stage: neighborhood aggregation (shared two-layer MLP on
/// [p_j - p_i || f_j], max-pooled) plus a linear shortcut of the center's
/// feature, summed and rectified.
struct EncoderStage {
  Linear edge;     // (3 + d_in) -> d_out, applied per neighbor
  BatchNorm edge_norm;
  Lbr mix;         // d_out -> d_out
  Linear shortcut;  // d_in -> d_out, no activation

  static EncoderStage create(ParameterStore& store, const std::string& name, std::size_t d_in,
                             std::size_t d_out) {
    EncoderStage e;
    e.edge = Linear::create(store, name + ".agg0.linear", d_in + 3, d_out);
    e.edge_norm = BatchNorm::create(store, name + ".agg0.bn", d_out);
    e.mix = Lbr::create(store, name + ".agg1", d_out, d_out);
    e.shortcut = Linear::create(store, name + ".shortcut", d_in, d_out);
    return e;
  }

  Var operator()(Tape& t, Var feats_in, Var rel, const NeighborGraph& graph,
                 const NeighborGraph& centers) const {
    Var h = ad::edge_linear(t, feats_in, rel, graph, t.param(edge.weight), t.param(edge.bias));
    h = ad::relu(t, edge_norm(t, h));
    h = mix(t, h);
    Var pooled = ad::pool_neighborhood(t, h, ad::PoolMode::kMax);
    Var center = ad::gather_neighbors(t, feats_in, centers);  // Q x 1 x d_in
    Var res = shortcut(t, center);
    res = ad::reshape(t, res, t.value(pooled).shape());
    return ad::relu(t, ad::add(t, pooled, res));
  }
};

struct ScalePyramid {
  std::vector<Var> features;  // [stage], rows = batch * n_s
};

/// Residual hierarchical encoder with an interpolating U-Net decoder.
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParameterStore& store, const BackboneConfig& cfg) : cfg_(cfg) {
    embed_ = Lbr::create(store, "backbone.embed", 3, cfg.first_dim);
    for (std::size_t s = 0; s + 1 < cfg.stages; ++s) {
      encoder_.push_back(EncoderStage::create(store, "backbone.encoder" + std::to_string(s + 1),
                                              cfg.stage_dim(s), cfg.stage_dim(s + 1)));
    }
    for (std::size_t s = cfg.stages - 1; s-- > 0;) {
      decoder_.push_back(Lbr::create(store, "backbone.decoder" + std::to_string(s + 1),
                                     cfg.stage_dim(s + 1) + cfg.stage_dim(s), cfg.stage_dim(s)));
    }
    head_ = Lbr::create(store, "backbone.out", cfg.first_dim, cfg.d_out);
  }

  const BackboneConfig& config() const { return cfg_; }

  Var initial_embed(Tape& t, const PatchGeometry& g) const {
    return embed_(t, t.constant(g.input));
  }

  ScalePyramid encode(Tape& t, const PatchGeometry& g) const {
    ScalePyramid p;
    p.features.push_back(initial_embed(t, g));
    for (std::size_t s = 0; s < encoder_.size(); ++s) {
      Var rel = t.constant(g.down_rel[s]);
      p.features.push_back(encoder_[s](t, p.features[s], rel, g.down_graph[s], g.down_center[s]));
    }
    return p;
  }

  /// f^b at input resolution, d_out channels.
  Var decode(Tape& t, const PatchGeometry& g, const ScalePyramid& p) const {
    Var x = p.features.back();
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::size_t s = cfg_.stages - 2 - i;  // target stage
      Var up = ad::interpolate(t, x, g.up_plan[s]);
      x = decoder_[i](t, ad::concat(t, {up, p.features[s]}));
    }
    return head_(t, x);
  }

  const std::vector<EncoderStage>& encoder() const { return encoder_; }
  const std::vector<Lbr>& decoder() const { return decoder_; }
  const Lbr& output_layer() const { return head_; }

 private:
  BackboneConfig cfg_;
  Lbr embed_;
  std::vector<EncoderStage> encoder_;
  std::vector<Lbr> decoder_;  // coarsest first
  Lbr head_;
};

}  // namespace msecnet::model
