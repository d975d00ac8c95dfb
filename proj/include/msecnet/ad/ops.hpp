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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msecnet/ad/tape.hpp"
#include "msecnet/ad/tensor.hpp"
#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"

namespace msecnet::ad {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kNormMomentum = 0.9;
inline constexpr double kNormalizeEps = 1e-8;

namespace detail {

inline Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  out.back() = last;
  return out;
}

inline void check_graph(const geom::NeighborGraph& g, std::size_t rows, const char* op) {
  for (std::size_t idx : g.indices) {
    MSECNET_REQUIRE(idx < rows, ErrorKind::kShape,
            std::string(op) + ": neighbor index " + std::to_string(idx) + " out of range for " +
                std::to_string(rows) + " rows");
  }
}

inline void add_into(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  dst->matrix() += src.matrix();
}

}  // namespace detail

/// y = x W^T + b over the last axis.
inline Var linear(Tape& t, Var x, Var w, std::optional<Var> b = std::nullopt) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  MSECNET_REQUIRE(wv.rank() == 2 && xv.rank() >= 1 && xv.cols() == wv.dim(1), ErrorKind::kShape,
          "linear: input " + shape_string(xv.shape()) + " incompatible with weight " +
              shape_string(wv.shape()));
  if (b) {
    MSECNET_REQUIRE(t.value(*b).size() == wv.dim(0), ErrorKind::kShape, "linear: bias size mismatch");
  }
  Tensor y(detail::with_last(xv.shape(), wv.dim(0)));
  y.matrix().noalias() = xv.matrix() * wv.matrix().transpose();
  if (b) {
    const auto bv = t.value(*b).matrix();  // 1 x d_out
    y.matrix().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data(), bv.size());
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || (b && t.requires_grad(*b));
  const std::size_t xid = x.id, wid = w.id, bid = b ? b->id : x.id;
  const bool has_b = b.has_value();
  return t.record(std::move(y), rg, [xid, wid, bid, has_b](Tape& tp, std::size_t self) {
    const ConstMatrixMap dy = std::as_const(*tp.grad_of(self)).matrix();
    if (Tensor* gx = tp.grad_of(xid)) gx->matrix().noalias() += dy * tp.value(Var{wid}).matrix();
    if (Tensor* gw = tp.grad_of(wid)) {
      gw->matrix().noalias() += dy.transpose() * tp.value(Var{xid}).matrix();
    }
    if (has_b) {
      if (Tensor* gb = tp.grad_of(bid)) {
        Eigen::Map<Eigen::RowVectorXd>(gb->data(), static_cast<Eigen::Index>(gb->size())) +=
            dy.colwise().sum();
      }
    }
  });
}

/// Per-channel normalization over all leading positions.
inline Var batchnorm(Tape& t, Var x, Var scale, Var shift, std::size_t stats_id) {
  const Tensor& xv = t.value(x);
  const std::size_t d = xv.cols(), m = xv.rows();
  MSECNET_REQUIRE(t.value(scale).size() == d && t.value(shift).size() == d, ErrorKind::kShape,
          "batchnorm: scale/shift size does not match channel count");
  ParameterStore* store = t.store();
  MSECNET_REQUIRE(store != nullptr, ErrorKind::kLifecycle, "batchnorm needs a parameter store");
  RunningStats& stats = store->stats(stats_id);
  MSECNET_REQUIRE(stats.mean.size() == d, ErrorKind::kShape, "batchnorm: statistics size mismatch");

  const double* gamma = t.value(scale).data();
  const double* beta = t.value(shift).data();
  std::vector<double> mean(d, 0.0), inv(d, 0.0);
  const bool train = t.options().norm_mode == NormMode::kTrain;
  if (train) {
    MSECNET_REQUIRE(m > 0, ErrorKind::kShape, "batchnorm: empty batch");
    std::vector<double> var(d, 0.0);
    const double* xp = xv.data();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += xp[r * d + c];
    for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double e = xp[r * d + c] - mean[c];
        var[c] += e * e;
      }
    for (std::size_t c = 0; c < d; ++c) {
      var[c] /= static_cast<double>(m);
      inv[c] = 1.0 / std::sqrt(var[c] + kNormEps);
    }
    if (t.options().calibrate_running_stats) {
      for (std::size_t c = 0; c < d; ++c) {
        stats.mean[c] = mean[c];
        stats.var[c] = var[c];
      }
      ++stats.updates;
    } else if (t.options().update_running_stats) {
      for (std::size_t c = 0; c < d; ++c) {
        stats.mean[c] = kNormMomentum * stats.mean[c] + (1.0 - kNormMomentum) * mean[c];
        stats.var[c] = kNormMomentum * stats.var[c] + (1.0 - kNormMomentum) * var[c];
      }
      ++stats.updates;
    }
  } else {
    MSECNET_REQUIRE(stats.updates > 0, ErrorKind::kUninitializedStats,
            "batchnorm " + stats.name + " evaluated before any training step");
    for (std::size_t c = 0; c < d; ++c) {
      mean[c] = stats.mean[c];
      inv[c] = 1.0 / std::sqrt(stats.var[c] + kNormEps);
    }
  }

  Tensor y(xv.shape());
  {
    const double* xp = xv.data();
    double* yp = y.data();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c)
        yp[r * d + c] = gamma[c] * (xp[r * d + c] - mean[c]) * inv[c] + beta[c];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(scale) || t.requires_grad(shift);
  const std::size_t xid = x.id, sid = scale.id, hid = shift.id;
  return t.record(std::move(y), rg,
                  [xid, sid, hid, train, m, d, mean = std::move(mean), inv = std::move(inv)](
                      Tape& tp, std::size_t self) {
    const double* dy = tp.grad_of(self)->data();
    const double* xp = tp.value(Var{xid}).data();
    const double* gamma = tp.value(Var{sid}).data();
    std::vector<double> sum_dy(d, 0.0), sum_dy_xhat(d, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double g = dy[r * d + c];
        sum_dy[c] += g;
        sum_dy_xhat[c] += g * (xp[r * d + c] - mean[c]) * inv[c];
      }
    if (Tensor* gs = tp.grad_of(sid))
      for (std::size_t c = 0; c < d; ++c) (*gs)[c] += sum_dy_xhat[c];
    if (Tensor* gh = tp.grad_of(hid))
      for (std::size_t c = 0; c < d; ++c) (*gh)[c] += sum_dy[c];
    if (Tensor* gx = tp.grad_of(xid)) {
      double* gp = gx->data();
      if (train) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            const double xhat = (xp[r * d + c] - mean[c]) * inv[c];
            gp[r * d + c] += gamma[c] * inv[c] *
                             (dy[r * d + c] - inv_m * sum_dy[c] - xhat * inv_m * sum_dy_xhat[c]);
          }
      } else {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < d; ++c) gp[r * d + c] += dy[r * d + c] * gamma[c] * inv[c];
      }
    }
  });
}

/// Elementwise max(0, x); subgradient 0 at exactly 0.
inline Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  const std::size_t n = xv.size();
  std::vector<std::uint8_t> mask;
  if (t.options().branches) {
    mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = static_cast<std::uint8_t>(t.decide(xv[i] > 0.0 ? 1u : 0u));
      y[i] = mask[i] ? xv[i] : 0.0;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  const std::size_t xid = x.id;
  return t.record(std::move(y), t.requires_grad(x),
                  [xid, mask = std::move(mask)](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_of(xid);
    if (!gx) return;
    const Tensor& dy = *tp.grad_of(self);
    if (!mask.empty()) {
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (mask[i]) (*gx)[i] += dy[i];
    } else {
      const Tensor& xv = tp.value(Var{xid});
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (xv[i] > 0.0) (*gx)[i] += dy[i];
    }
  });
}

/// Concatenation along the last axis, in argument order.
inline Var concat(Tape& t, std::span<const Var> xs) {
  MSECNET_REQUIRE(!xs.empty(), ErrorKind::kShape, "concat of an empty list");
  const Shape& s0 = t.value(xs[0]).shape();
  std::size_t total = 0;
  bool rg = false;
  std::vector<std::size_t> ids, widths;
  for (Var v : xs) {
    const Shape& s = t.value(v).shape();
    MSECNET_REQUIRE(s.size() == s0.size() && std::equal(s.begin(), s.end() - 1, s0.begin()),
            ErrorKind::kShape,
            "concat: leading shape " + shape_string(s) + " differs from " + shape_string(s0));
    total += s.back();
    rg = rg || t.requires_grad(v);
    ids.push_back(v.id);
    widths.push_back(s.back());
  }
  Tensor y(detail::with_last(s0, total));
  const std::size_t rows = y.rows();
  std::size_t off = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    y.matrix().middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[i])) =
        t.value(Var{ids[i]}).matrix();
    off += widths[i];
  }
  (void)rows;
  return t.record(std::move(y), rg, [ids, widths](Tape& tp, std::size_t self) {
    const ConstMatrixMap dy = std::as_const(*tp.grad_of(self)).matrix();
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (Tensor* g = tp.grad_of(ids[i]))
        g->matrix() += dy.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[i]));
      off += widths[i];
    }
  });
}

inline Var concat(Tape& t, std::initializer_list<Var> xs) {
  return concat(t, std::span<const Var>(xs.begin(), xs.size()));
}

/// out[q][m] = f[graph.indices[q][m]]; shape Q x k x d.
inline Var gather_neighbors(Tape& t, Var f, const geom::NeighborGraph& graph) {
  const Tensor& fv = t.value(f);
  MSECNET_REQUIRE(fv.rank() == 2, ErrorKind::kShape, "gather_neighbors expects an N x d input");
  detail::check_graph(graph, fv.rows(), "gather_neighbors");
  const std::size_t q = graph.queries(), k = graph.k, d = fv.cols();
  Tensor y({q, k, d});
  for (std::size_t r = 0; r < q * k; ++r)
    std::copy_n(fv.data() + graph.indices[r] * d, d, y.data() + r * d);
  const std::size_t fid = f.id;
  const geom::NeighborGraph* gp = &graph;
  return t.record(std::move(y), t.requires_grad(f), [fid, gp, d](Tape& tp, std::size_t self) {
    Tensor* gf = tp.grad_of(fid);
    if (!gf) return;
    const double* dy = tp.grad_of(self)->data();
    for (std::size_t r = 0; r < gp->indices.size(); ++r) {
      double* dst = gf->data() + gp->indices[r] * d;
      const double* src = dy + r * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

enum class PoolMode { kMax, kMean };

/// Reduces Q x k x d over the neighbor axis. Max ties go to the lowest slot.
inline Var pool_neighborhood(Tape& t, Var x, PoolMode mode) {
  const Tensor& xv = t.value(x);
  MSECNET_REQUIRE(xv.rank() == 3 && xv.dim(1) >= 1, ErrorKind::kShape,
          "pool_neighborhood expects a Q x k x d input with k >= 1");
  const std::size_t q = xv.dim(0), k = xv.dim(1), d = xv.dim(2);
  Tensor y({q, d});
  const double* xp = xv.data();
  const std::size_t xid = x.id;
  if (mode == PoolMode::kMean) {
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < q; ++i) {
      double* yr = y.data() + i * d;
      for (std::size_t m = 0; m < k; ++m) {
        const double* xr = xp + (i * k + m) * d;
        for (std::size_t c = 0; c < d; ++c) yr[c] += xr[c];
      }
      for (std::size_t c = 0; c < d; ++c) yr[c] *= inv_k;
    }
    return t.record(std::move(y), t.requires_grad(x), [xid, q, k, d](Tape& tp, std::size_t self) {
      Tensor* gx = tp.grad_of(xid);
      if (!gx) return;
      const double* dy = tp.grad_of(self)->data();
      const double inv_k = 1.0 / static_cast<double>(k);
      for (std::size_t i = 0; i < q; ++i)
        for (std::size_t m = 0; m < k; ++m) {
          double* g = gx->data() + (i * k + m) * d;
          for (std::size_t c = 0; c < d; ++c) g[c] += dy[i * d + c] * inv_k;
        }
    });
  }
  std::vector<std::uint32_t> arg(q * d, 0);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      std::uint32_t best = 0;
      double bv = xp[(i * k) * d + c];
      for (std::size_t m = 1; m < k; ++m) {
        const double v = xp[(i * k + m) * d + c];
        if (v > bv) {
          bv = v;
          best = static_cast<std::uint32_t>(m);
        }
      }
      if (t.options().branches) best = t.decide(best);
      arg[i * d + c] = best;
      y[i * d + c] = xp[(i * k + best) * d + c];
    }
  }
  return t.record(std::move(y), t.requires_grad(x),
                  [xid, q, k, d, arg = std::move(arg)](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_of(xid);
    if (!gx) return;
    const double* dy = tp.grad_of(self)->data();
    for (std::size_t i = 0; i < q; ++i)
      for (std::size_t c = 0; c < d; ++c)
        (*gx)[(i * k + arg[i * d + c]) * d + c] += dy[i * d + c];
  });
}

/// out[i][m] = f[j_m] - f[i] for a graph whose queries are the rows of f.
inline Var pairwise_diff(Tape& t, Var f, const geom::NeighborGraph& graph) {
  const Tensor& fv = t.value(f);
  MSECNET_REQUIRE(fv.rank() == 2 && graph.queries() == fv.rows(), ErrorKind::kShape,
          "pairwise_diff: graph must have one query per feature row");
  detail::check_graph(graph, fv.rows(), "pairwise_diff");
  const std::size_t n = fv.rows(), k = graph.k, d = fv.cols();
  Tensor y({n, k, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < k; ++m) {
      const double* fj = fv.data() + graph.indices[i * k + m] * d;
      const double* fi = fv.data() + i * d;
      double* yr = y.data() + (i * k + m) * d;
      for (std::size_t c = 0; c < d; ++c) yr[c] = fj[c] - fi[c];
    }
  const std::size_t fid = f.id;
  const geom::NeighborGraph* gp = &graph;
  return t.record(std::move(y), t.requires_grad(f), [fid, gp, n, k, d](Tape& tp, std::size_t self) {
    Tensor* gf = tp.grad_of(fid);
    if (!gf) return;
    const double* dy = tp.grad_of(self)->data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        double* gj = gf->data() + gp->indices[i * k + m] * d;
        double* gi = gf->data() + i * d;
        const double* src = dy + (i * k + m) * d;
        for (std::size_t c = 0; c < d; ++c) {
          gj[c] += src[c];
          gi[c] -= src[c];
        }
      }
  });
}

/// Weighted three-source interpolation; weights are constants.
inline Var interpolate(Tape& t, Var f, const geom::InterpPlan& plan) {
  const Tensor& fv = t.value(f);
  MSECNET_REQUIRE(fv.rank() == 2 && plan.sources == fv.rows(), ErrorKind::kShape,
          "interpolate: plan built for " + std::to_string(plan.sources) + " sources, input has " +
              std::to_string(fv.rows()) + " rows");
  for (const auto& idx : plan.indices)
    for (std::size_t j : idx)
      MSECNET_REQUIRE(j < fv.rows(), ErrorKind::kShape, "interpolate: source index out of range");
  const std::size_t n = plan.targets(), d = fv.cols();
  Tensor y({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = y.data() + i * d;
    for (int m = 0; m < 3; ++m) {
      const double w = plan.weights[i][m];
      if (w == 0.0) continue;
      const double* fr = fv.data() + plan.indices[i][m] * d;
      for (std::size_t c = 0; c < d; ++c) yr[c] += w * fr[c];
    }
  }
  const std::size_t fid = f.id;
  const geom::InterpPlan* pp = &plan;
  return t.record(std::move(y), t.requires_grad(f), [fid, pp, n, d](Tape& tp, std::size_t self) {
    Tensor* gf = tp.grad_of(fid);
    if (!gf) return;
    const double* dy = tp.grad_of(self)->data();
    for (std::size_t i = 0; i < n; ++i)
      for (int m = 0; m < 3; ++m) {
        const double w = pp->weights[i][m];
        if (w == 0.0) continue;
        double* g = gf->data() + pp->indices[i][m] * d;
        for (std::size_t c = 0; c < d; ++c) g[c] += w * dy[i * d + c];
      }
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  MSECNET_REQUIRE(av.shape() == bv.shape(), ErrorKind::kShape,
          "add: shape " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor y(av.shape());
  y.matrix() = av.matrix() + bv.matrix();
  const std::size_t aid = a.id, bid = b.id;
  return t.record(std::move(y), t.requires_grad(a) || t.requires_grad(b),
                  [aid, bid](Tape& tp, std::size_t self) {
    const Tensor& dy = *tp.grad_of(self);
    detail::add_into(tp.grad_of(aid), dy);
    detail::add_into(tp.grad_of(bid), dy);
  });
}

inline Var scale(Tape& t, Var x, double c) {
  Tensor y = t.value(x);
  y.matrix() *= c;
  const std::size_t xid = x.id;
  return t.record(std::move(y), t.requires_grad(x), [xid, c](Tape& tp, std::size_t self) {
    if (Tensor* g = tp.grad_of(xid)) g->matrix() += c * std::as_const(*tp.grad_of(self)).matrix();
  });
}

inline Var sum(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const std::size_t xid = x.id;
  return t.record(Tensor::scalar(s), t.requires_grad(x), [xid](Tape& tp, std::size_t self) {
    Tensor* g = tp.grad_of(xid);
    if (!g) return;
    const double dy = (*tp.grad_of(self))[0];
    for (double& v : g->values()) v += dy;
  });
}

inline Var mean(Tape& t, Var x) {
  return scale(t, sum(t, x), 1.0 / static_cast<double>(t.value(x).size()));
}

/// sum(x * w) against a constant weight tensor of the same size.
inline Var weighted_sum(Tape& t, Var x, const Tensor& w) {
  const Tensor& xv = t.value(x);
  MSECNET_REQUIRE(xv.size() == w.size(), ErrorKind::kShape, "weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * w[i];
  const std::size_t xid = x.id;
  return t.record(Tensor::scalar(s), t.requires_grad(x), [xid, w](Tape& tp, std::size_t self) {
    Tensor* g = tp.grad_of(xid);
    if (!g) return;
    const double dy = (*tp.grad_of(self))[0];
    for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += dy * w[i];
  });
}

/// linear([rel || f[j]]) for every graph slot, computed as a per-point
/// projection of f followed by a gather. W is d_out x (3 + d); rel is
/// Q x k x 3 (relative positions, constant).
inline Var edge_linear(Tape& t, Var f, Var rel, const geom::NeighborGraph& graph, Var w, Var b) {
  const Tensor& fv = t.value(f);
  const Tensor& rv = t.value(rel);
  const Tensor& wv = t.value(w);
  const std::size_t d = fv.cols(), q = graph.queries(), k = graph.k;
  MSECNET_REQUIRE(fv.rank() == 2 && wv.rank() == 2 && wv.dim(1) == d + 3, ErrorKind::kShape,
          "edge_linear: weight " + shape_string(wv.shape()) + " incompatible with feature width " +
              std::to_string(d));
  MSECNET_REQUIRE(rv.rank() == 3 && rv.dim(0) == q && rv.dim(1) == k && rv.dim(2) == 3, ErrorKind::kShape,
          "edge_linear: relative positions must be Q x k x 3");
  MSECNET_REQUIRE(!t.requires_grad(rel), ErrorKind::kInvalidArgument,
          "edge_linear: relative positions must be a constant");
  const std::size_t dout = wv.dim(0);
  MSECNET_REQUIRE(t.value(b).size() == dout, ErrorKind::kShape, "edge_linear: bias size mismatch");
  detail::check_graph(graph, fv.rows(), "edge_linear");

  RowMatrix h = fv.matrix() * wv.matrix().rightCols(static_cast<Eigen::Index>(d)).transpose();
  Tensor y({q, k, dout});
  y.matrix().noalias() = rv.matrix() * wv.matrix().leftCols(3).transpose();
  const double* bp = t.value(b).data();
  for (std::size_t r = 0; r < q * k; ++r) {
    double* yr = y.data() + r * dout;
    const double* hr = h.data() + graph.indices[r] * dout;
    for (std::size_t c = 0; c < dout; ++c) yr[c] += hr[c] + bp[c];
  }
  const bool rg = t.requires_grad(f) || t.requires_grad(w) || t.requires_grad(b);
  const std::size_t fid = f.id, rid = rel.id, wid = w.id, bid = b.id;
  const geom::NeighborGraph* gp = &graph;
  return t.record(std::move(y), rg, [=](Tape& tp, std::size_t self) {
    const Tensor& dy = *tp.grad_of(self);
    const Tensor& fv2 = tp.value(Var{fid});
    const Tensor& wv2 = tp.value(Var{wid});
    RowMatrix g = RowMatrix::Zero(static_cast<Eigen::Index>(fv2.rows()), static_cast<Eigen::Index>(dout));
    for (std::size_t r = 0; r < gp->indices.size(); ++r) {
      double* gr = g.data() + gp->indices[r] * dout;
      const double* src = dy.data() + r * dout;
      for (std::size_t c = 0; c < dout; ++c) gr[c] += src[c];
    }
    if (Tensor* gw = tp.grad_of(wid)) {
      gw->matrix().leftCols(3).noalias() += dy.matrix().transpose() * tp.value(Var{rid}).matrix();
      gw->matrix().rightCols(static_cast<Eigen::Index>(d)).noalias() += g.transpose() * fv2.matrix();
    }
    if (Tensor* gb = tp.grad_of(bid)) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), static_cast<Eigen::Index>(dout)) += dy.matrix().colwise().sum();
    }
    if (Tensor* gf = tp.grad_of(fid)) {
      gf->matrix().noalias() += g * wv2.matrix().rightCols(static_cast<Eigen::Index>(d));
    }
  });
}

/// linear(pairwise_diff(f)) computed as differences of a per-point projection.
inline Var diff_linear(Tape& t, Var f, const geom::NeighborGraph& graph, Var w, Var b) {
  const Tensor& fv = t.value(f);
  const Tensor& wv = t.value(w);
  MSECNET_REQUIRE(fv.rank() == 2 && graph.queries() == fv.rows(), ErrorKind::kShape,
          "diff_linear: graph must have one query per feature row");
  MSECNET_REQUIRE(wv.rank() == 2 && wv.dim(1) == fv.cols(), ErrorKind::kShape,
          "diff_linear: weight " + shape_string(wv.shape()) + " incompatible with input");
  detail::check_graph(graph, fv.rows(), "diff_linear");
  const std::size_t n = fv.rows(), k = graph.k, dout = wv.dim(0);
  MSECNET_REQUIRE(t.value(b).size() == dout, ErrorKind::kShape, "diff_linear: bias size mismatch");
  RowMatrix h = fv.matrix() * wv.matrix().transpose();
  Tensor y({n, k, dout});
  const double* bp = t.value(b).data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < k; ++m) {
      const double* hj = h.data() + graph.indices[i * k + m] * dout;
      const double* hi = h.data() + i * dout;
      double* yr = y.data() + (i * k + m) * dout;
      for (std::size_t c = 0; c < dout; ++c) yr[c] = (hj[c] - hi[c]) + bp[c];
    }
  const bool rg = t.requires_grad(f) || t.requires_grad(w) || t.requires_grad(b);
  const std::size_t fid = f.id, wid = w.id, bid = b.id;
  const geom::NeighborGraph* gp = &graph;
  return t.record(std::move(y), rg, [=](Tape& tp, std::size_t self) {
    const Tensor& dy = *tp.grad_of(self);
    RowMatrix g = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dout));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t m = 0; m < k; ++m) {
        double* gj = g.data() + gp->indices[i * k + m] * dout;
        double* gi = g.data() + i * dout;
        const double* src = dy.data() + (i * k + m) * dout;
        for (std::size_t c = 0; c < dout; ++c) {
          gj[c] += src[c];
          gi[c] -= src[c];
        }
      }
    if (Tensor* gw = tp.grad_of(wid)) gw->matrix().noalias() += g.transpose() * tp.value(Var{fid}).matrix();
    if (Tensor* gb = tp.grad_of(bid)) {
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), static_cast<Eigen::Index>(dout)) += dy.matrix().colwise().sum();
    }
    if (Tensor* gf = tp.grad_of(fid)) gf->matrix().noalias() += g * tp.value(Var{wid}).matrix();
  });
}

/// Row-wise unit normalization of an R x 3 tensor. Rows whose norm is below
/// 1e-8 are replaced by (0, 0, 1), flagged, and receive no gradient.
inline Var normalize_rows(Tape& t, Var x, std::vector<std::uint8_t>* flagged = nullptr) {
  const Tensor& xv = t.value(x);
  MSECNET_REQUIRE(xv.cols() == 3, ErrorKind::kShape, "normalize_rows expects R x 3");
  const std::size_t r = xv.rows();
  Tensor y(xv.shape());
  std::vector<double> norms(r);
  std::vector<std::uint8_t> bad(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = xv.data() + i * 3;
    const double nrm = std::sqrt(xr[0] * xr[0] + xr[1] * xr[1] + xr[2] * xr[2]);
    norms[i] = nrm;
    bad[i] = static_cast<std::uint8_t>(t.decide(nrm < kNormalizeEps ? 1u : 0u));
    double* yr = y.data() + i * 3;
    if (bad[i]) {
      yr[0] = 0.0;
      yr[1] = 0.0;
      yr[2] = 1.0;
    } else {
      for (int c = 0; c < 3; ++c) yr[c] = xr[c] / nrm;
    }
  }
  if (flagged) *flagged = bad;
  const std::size_t xid = x.id;
  return t.record(std::move(y), t.requires_grad(x),
                  [xid, r, norms = std::move(norms), bad = std::move(bad)](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_of(xid);
    if (!gx) return;
    const double* dy = tp.grad_of(self)->data();
    const double* yv = tp.value(Var{self}).data();
    for (std::size_t i = 0; i < r; ++i) {
      if (bad[i]) continue;
      const double* yr = yv + i * 3;
      const double* gr = dy + i * 3;
      const double dot = yr[0] * gr[0] + yr[1] * gr[1] + yr[2] * gr[2];
      for (int c = 0; c < 3; ++c) (*gx)[i * 3 + c] += (gr[c] - yr[c] * dot) / norms[i];
    }
  });
}

}  // namespace msecnet::ad

namespace msecnet::ad {

/// Same values under a new shape of equal size.
inline Var reshape(Tape& t, Var x, Shape shape) {
  const Tensor& xv = t.value(x);
  MSECNET_REQUIRE(shape_size(shape) == xv.size(), ErrorKind::kShape,
          "reshape " + shape_string(xv.shape()) + " to " + shape_string(shape));
  Tensor y(std::move(shape), xv.storage());
  const std::size_t xid = x.id;
  return t.record(std::move(y), t.requires_grad(x), [xid](Tape& tp, std::size_t self) {
    Tensor* g = tp.grad_of(xid);
    if (!g) return;
    const Tensor& dy = *tp.grad_of(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*g)[i] += dy[i];
  });
}

}  // namespace msecnet::ad
