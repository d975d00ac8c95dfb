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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "msecnet/ad/parameters.hpp"
#include "msecnet/error.hpp"

namespace msecnet::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay; the decay mask selects which scalars decay.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t size, AdamWConfig cfg, std::vector<std::uint8_t> decay_mask)
      : cfg_(cfg), decay_(std::move(decay_mask)), m_(size, 0.0), v_(size, 0.0) {
    MSECNET_REQUIRE(decay_.size() == size, ErrorKind::kShape, "decay mask size mismatch");
  }

  /// Decay applies to linear weights only, never to biases or norm scale/shift.
  static AdamW for_store(const ad::ParameterStore& store, AdamWConfig cfg) {
    std::vector<std::uint8_t> mask;
    mask.reserve(store.learnable_count());
    for (const auto& p : store.params())
      mask.insert(mask.end(), p.value.size(), p.kind == ad::ParamKind::kWeight ? 1 : 0);
    return AdamW(store.learnable_count(), cfg, std::move(mask));
  }

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  void step(std::span<double> theta, std::span<const double> grad, double lr) {
    MSECNET_REQUIRE(theta.size() == m_.size() && grad.size() == m_.size(), ErrorKind::kShape,
            "optimizer expects " + std::to_string(m_.size()) + " scalars, got " +
                std::to_string(theta.size()) + " values and " + std::to_string(grad.size()) + " gradients");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      if (decay_[i]) theta[i] -= lr * cfg_.weight_decay * theta[i];
      theta[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

  void step(ad::ParameterStore& store, std::span<const double> grad, double lr) {
    std::vector<double> theta = store.flatten();
    step(std::span<double>(theta), grad, lr);
    store.unflatten(theta);
  }

 private:
  AdamWConfig cfg_;
  std::vector<std::uint8_t> decay_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

/// lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2; t beyond T gives lr_min.
inline double cosine_lr(std::uint64_t t, std::uint64_t total, double lr_max, double lr_min) {
  MSECNET_REQUIRE(total > 0, ErrorKind::kInvalidArgument, "schedule length must be positive");
  if (t >= total) return lr_min;
  const double x = static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * x));
}

}  // namespace msecnet::train
