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
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "msecnet/ad/tape.hpp"

namespace msecnet::ad {

/// Builds a scalar on the given tape from parameters in the tape's store.
using LossClosure = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double h = 1e-6;
  double denominator_floor = 1e-10;
  // Replay the unperturbed pass's ReLU/max/branch decisions on perturbed passes.
  bool freeze_branches = true;
  // Batch norm uses fixed statistics and never updates them while checking.
  NormMode norm_mode = NormMode::kEval;
  // Fourth-order stencil (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h instead of the
  // central difference; allows a larger h with negligible truncation error.
  bool five_point = false;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Per scalar, in flat order.
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> errors;

  /// Scalars whose relative error exceeds tol.
  std::size_t count_above(double tol) const {
    return static_cast<std::size_t>(std::count_if(errors.begin(), errors.end(), [tol](double e) { return e > tol; }));
  }
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// One train-mode pass that sets every running statistic to the closure's own
/// batch statistics, so fixed-statistics checking sees centered activations.
inline void calibrate_running_stats(const LossClosure& closure, ParameterStore& params) {
  Tape::Options o;
  o.norm_mode = NormMode::kTrain;
  o.calibrate_running_stats = true;
  Tape tape(&params, o);
  closure(tape);
}

/// Finite differences for every learnable scalar (central by default),
/// compared against one reverse sweep.
inline GradCheckReport grad_check(const LossClosure& closure, ParameterStore& params,
                                  const GradCheckOptions& options = {}) {
  BranchLog branches;
  Tape::Options tape_options;
  tape_options.norm_mode = options.norm_mode;
  tape_options.update_running_stats = false;
  tape_options.branches = options.freeze_branches ? &branches : nullptr;

  auto evaluate = [&](bool replay) {
    if (options.freeze_branches) {
      if (replay) branches.start_replay();
      else branches.stop();
    }
    Tape tape(&params, tape_options);
    const double v = tape.value(closure(tape))[0];
    branches.stop();
    return v;
  };

  const double first = evaluate(false);
  const double second = evaluate(false);
  MSECNET_REQUIRE(first == second, ErrorKind::kDeterminism,
          "closure is not deterministic: two forward passes disagree");

  std::vector<double> analytic;
  {
    if (options.freeze_branches) branches.start_recording();
    Tape tape(&params, tape_options);
    Var loss = closure(tape);
    branches.stop();
    tape.backward(loss);
    analytic = tape.parameter_gradients();
  }

  GradCheckReport report;
  std::size_t flat = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params.param(p).value;
    for (std::size_t i = 0; i < value.size(); ++i, ++flat) {
      const double saved = value[i];
      auto at = [&](double offset) {
        value[i] = saved + offset;
        return evaluate(true);
      };
      const double h = options.h;
      const double numeric = options.five_point
                                 ? (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
                                 : (at(h) - at(-h)) / (2.0 * h);
      value[i] = saved;
      const double err = relative_error(analytic[flat], numeric, options.denominator_floor);
      ++report.checked;
      report.analytic.push_back(analytic[flat]);
      report.numeric.push_back(numeric);
      report.errors.push_back(err);
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_index = flat;
        report.worst_param = params.param(p).name + "[" + std::to_string(i) + "]";
        report.worst_analytic = analytic[flat];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace msecnet::ad
