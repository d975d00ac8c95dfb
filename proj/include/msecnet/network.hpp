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

#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msecnet/backbone.hpp"
#include "msecnet/msec.hpp"

namespace msecnet::model {

struct NetworkOutput {
  Var normals;  // N x 3, unit rows, patch frame
  Var backbone;
  ScalePyramid pyramid;
  std::optional<EdgeFeatures> stream;
  std::vector<std::uint8_t> degenerate;  // per row: pre-normalization norm < 1e-8
};

/// Backbone + edge-conditioning stream + normal head, with its own parameters.
class Network {
 public:
  explicit Network(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = Backbone(store_, cfg_.backbone);
    if (cfg_.msec.use_stream) stream_ = MsecStream(store_, cfg_);
    head_ = Linear::create(store_, "head.linear", cfg_.backbone.d_out, 3);
    store_.initialize(seed);
  }

  Network(const Network&) = default;
  Network& operator=(const Network&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const Backbone& backbone() const { return backbone_; }
  const MsecStream& stream() const { return stream_; }
  const Linear& head() const { return head_; }

  /// The tape must have been created over params().
  NetworkOutput forward(Tape& t, const PatchGeometry& g) const {
    NetworkOutput out;
    out.pyramid = backbone_.encode(t, g);
    out.backbone = backbone_.decode(t, g, out.pyramid);
    Var features = out.backbone;
    if (cfg_.msec.use_stream) {
      out.stream = stream_(t, g, out.pyramid, out.backbone);
      features = out.stream->conditioned;
    }
    out.normals = normal_head(t, features, &out.degenerate);
    return out;
  }

  Var normal_head(Tape& t, Var features, std::vector<std::uint8_t>* degenerate = nullptr) const {
    return ad::normalize_rows(t, head_(t, features), degenerate);
  }

  /// Learnable scalar count grouped by module prefix.
  std::map<std::string, std::size_t> parameter_breakdown() const {
    std::map<std::string, std::size_t> out;
    for (const auto& p : store_.params()) {
      const auto first = p.name.find('.');
      const auto second = p.name.find('.', first + 1);
      std::string key = p.name.substr(0, second);
      // strip trailing layer index so e.g. msec.channel0/1 group together
      while (!key.empty() && std::isdigit(static_cast<unsigned char>(key.back()))) key.pop_back();
      out[key] += p.value.size();
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  Backbone backbone_;
  MsecStream stream_;
  Linear head_;
};

}  // namespace msecnet::model
