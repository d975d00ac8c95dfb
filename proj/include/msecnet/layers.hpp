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

#include "msecnet/ad/ops.hpp"
#include "msecnet/ad/parameters.hpp"
#include "msecnet/ad/tape.hpp"

namespace msecnet::model {

using ad::ParamKind;
using ad::ParameterStore;
using ad::Tape;
using ad::Tensor;
using ad::Var;

struct Linear {
  std::size_t weight = 0, bias = 0;
  std::size_t in = 0, out = 0;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(name + ".weight", ParamKind::kWeight, Tensor({out, in}));
    l.bias = store.add(name + ".bias", ParamKind::kBias, Tensor({out}));
    return l;
  }

  Var operator()(Tape& t, Var x) const { return ad::linear(t, x, t.param(weight), t.param(bias)); }
};

struct BatchNorm {
  std::size_t scale = 0, shift = 0, stats = 0;

  static BatchNorm create(ParameterStore& store, const std::string& name, std::size_t channels) {
    BatchNorm n;
    n.scale = store.add(name + ".scale", ParamKind::kNormScale, Tensor({channels}, 1.0));
    n.shift = store.add(name + ".shift", ParamKind::kNormShift, Tensor({channels}));
    n.stats = store.add_stats(name, channels);
    return n;
  }

  Var operator()(Tape& t, Var x) const {
    return ad::batchnorm(t, x, t.param(scale), t.param(shift), stats);
  }
};

/// Linear -> batch norm -> ReLU.
struct Lbr {
  Linear linear;
  BatchNorm norm;

  static Lbr create(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t out) {
    return {Linear::create(store, name + ".linear", in, out), BatchNorm::create(store, name + ".bn", out)};
  }

  std::size_t in() const { return linear.in; }
  std::size_t out() const { return linear.out; }

  Var operator()(Tape& t, Var x) const { return ad::relu(t, norm(t, linear(t, x))); }

  /// Normalization and activation on an already-projected input.
  Var finish(Tape& t, Var projected) const { return ad::relu(t, norm(t, projected)); }
};

}  // namespace msecnet::model
