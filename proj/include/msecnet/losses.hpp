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
#include <span>
#include <string>
#include <vector>

#include "msecnet/ad/ops.hpp"
#include "msecnet/ad/tape.hpp"
#include "msecnet/ad/tensor.hpp"
#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"

namespace msecnet::train {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using geom::Vec3;

inline constexpr double kUnitTolerance = 1e-6;

struct LossReport {
  double l_reg = 0.0;
  double l_sin = 0.0;
  double l_total = 0.0;
};

namespace detail {

inline void check_pair(std::size_t np, std::size_t ng) {
  MSECNET_REQUIRE(np == ng, ErrorKind::kShape,
          "loss inputs have " + std::to_string(np) + " and " + std::to_string(ng) + " rows");
  MSECNET_REQUIRE(np > 0, ErrorKind::kShape, "loss over zero points");
}

inline void check_unit(const Vec3& v, std::size_t i, const char* which) {
  MSECNET_REQUIRE(std::abs(v.norm() - 1.0) <= kUnitTolerance, ErrorKind::kInvalidArgument,
          std::string(which) + " row " + std::to_string(i) + " is not unit length");
}

inline Vec3 row(const Tensor& t, std::size_t i) { return Vec3(t[3 * i], t[3 * i + 1], t[3 * i + 2]); }

inline void check_rows(const Tensor& pred, const Tensor& gt) {
  MSECNET_REQUIRE(pred.cols() == 3 && gt.cols() == 3, ErrorKind::kShape, "loss inputs must be R x 3");
  check_pair(pred.rows(), gt.rows());
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    check_unit(row(pred, i), i, "prediction");
    check_unit(row(gt, i), i, "ground truth");
  }
}

}  // namespace detail

/// mean_i min(|p - g|^2, |p + g|^2)
inline double loss_regression(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  detail::check_pair(pred.size(), gt.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::check_unit(pred[i], i, "prediction");
    detail::check_unit(gt[i], i, "ground truth");
    s += std::min((pred[i] - gt[i]).squaredNorm(), (pred[i] + gt[i]).squaredNorm());
  }
  return s / static_cast<double>(pred.size());
}

/// mean_i |p x g|
inline double loss_sine(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  detail::check_pair(pred.size(), gt.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::check_unit(pred[i], i, "prediction");
    detail::check_unit(gt[i], i, "ground truth");
    s += pred[i].cross(gt[i]).norm();
  }
  return s / static_cast<double>(pred.size());
}

inline LossReport loss_total(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  LossReport r;
  r.l_reg = loss_regression(pred, gt);
  r.l_sin = loss_sine(pred, gt);
  r.l_total = r.l_reg + r.l_sin;
  return r;
}

// ---- tape ops ------------------------------------------------------------

/// Regression loss against constant targets. At |p - g| = |p + g| the
/// first branch is taken.
inline Var regression_loss(Tape& t, Var pred, const Tensor& gt) {
  const Tensor& pv = t.value(pred);
  detail::check_rows(pv, gt);
  const std::size_t n = pv.rows();
  std::vector<double> sign(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = detail::row(pv, i), g = detail::row(gt, i);
    const double dm = (p - g).squaredNorm(), dp = (p + g).squaredNorm();
    const bool minus = t.decide(dm <= dp ? 0u : 1u) == 0u;
    sign[i] = minus ? -1.0 : 1.0;
    s += minus ? dm : dp;
  }
  const double inv = 1.0 / static_cast<double>(n);
  const std::size_t pid = pred.id;
  return t.record(Tensor::scalar(s * inv), t.requires_grad(pred),
                  [pid, gt, sign = std::move(sign), inv](Tape& tp, std::size_t self) {
    Tensor* gp = tp.grad_of(pid);
    if (!gp) return;
    const double dy = (*tp.grad_of(self))[0] * inv;
    const Tensor& pv = tp.value(Var{pid});
    for (std::size_t i = 0; i < sign.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c)
        (*gp)[3 * i + c] += dy * 2.0 * (pv[3 * i + c] + sign[i] * gt[3 * i + c]);
  });
}

/// Sine loss against constant targets; subgradient 0 where p is parallel to g.
inline Var sine_loss(Tape& t, Var pred, const Tensor& gt) {
  const Tensor& pv = t.value(pred);
  detail::check_rows(pv, gt);
  const std::size_t n = pv.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += detail::row(pv, i).cross(detail::row(gt, i)).norm();
  const double inv = 1.0 / static_cast<double>(n);
  const std::size_t pid = pred.id;
  return t.record(Tensor::scalar(s * inv), t.requires_grad(pred), [pid, gt, inv](Tape& tp, std::size_t self) {
    Tensor* gp = tp.grad_of(pid);
    if (!gp) return;
    const double dy = (*tp.grad_of(self))[0] * inv;
    const Tensor& pv = tp.value(Var{pid});
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      const Vec3 g = detail::row(gt, i);
      const Vec3 c = detail::row(pv, i).cross(g);
      const double m = c.norm();
      if (m == 0.0) continue;
      const Vec3 d = g.cross(c) / m;
      for (int k = 0; k < 3; ++k) (*gp)[3 * i + static_cast<std::size_t>(k)] += dy * d[k];
    }
  });
}

struct LossVars {
  Var reg;
  Var sin;
  Var total;
};

inline LossVars total_loss(Tape& t, Var pred, const Tensor& gt) {
  LossVars v;
  v.reg = regression_loss(t, pred, gt);
  v.sin = sine_loss(t, pred, gt);
  v.total = ad::add(t, v.reg, v.sin);
  return v;
}

inline LossReport report(const Tape& t, const LossVars& v) {
  LossReport r;
  r.l_reg = t.value(v.reg)[0];
  r.l_sin = t.value(v.sin)[0];
  r.l_total = r.l_reg + r.l_sin;
  return r;
}

}  // namespace msecnet::train
