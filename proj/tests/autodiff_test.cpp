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


#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "support.hpp"

namespace {

using msecnet::Error;
using msecnet::ErrorKind;
using msecnet::ad::NormMode;
using msecnet::ad::ParameterStore;
using msecnet::ad::ParamKind;
using msecnet::ad::PoolMode;
using msecnet::ad::Tape;
using msecnet::ad::TapeOptions;
using msecnet::ad::Tensor;
using msecnet::ad::Var;
using msecnet::geom::NeighborGraph;
using msecnet::geom::Vec3;
namespace ad = msecnet::ad;
namespace geom = msecnet::geom;
namespace mt = msecnet::testing;

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Worst relative error of d/d(inputs) sum(w * op(inputs)) against central
/// differences, with the inputs registered as parameters.
double op_grad_error(const std::vector<Tensor>& inputs, const OpFn& op, NormMode mode = NormMode::kTrain,
                     double h = 1e-6, std::uint64_t seed = 99) {
  ParameterStore store;
  for (std::size_t i = 0; i < inputs.size(); ++i) store.add("in" + std::to_string(i), ParamKind::kWeight, inputs[i]);
  std::optional<Tensor> w;
  const auto closure = [&](Tape& t) {
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(t.param(i));
    Var out = op(t, vars);
    if (!w) w = mt::random_tensor(t.value(out).shape(), seed);
    return ad::weighted_sum(t, out, *w);
  };
  ad::GradCheckOptions o;
  o.h = h;
  o.norm_mode = mode;
  return ad::grad_check(closure, store, o).max_rel_error;
}

Tensor forward(const std::vector<Tensor>& inputs, const OpFn& op);

/// Owning copy of the forward values, safe to iterate in a range-for.
std::vector<double> forward_values(const std::vector<Tensor>& inputs, const OpFn& op) {
  return forward(inputs, op).storage();
}

Tensor forward(const std::vector<Tensor>& inputs, const OpFn& op) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.input(x, false));
  return t.value(op(t, vars));
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kInvalidArgument;
}

NeighborGraph make_graph(std::size_t k, std::vector<std::size_t> idx) {
  NeighborGraph g;
  g.k = k;
  g.indices = std::move(idx);
  g.distances.assign(g.indices.size(), 0.0);
  return g;
}

NeighborGraph random_graph(std::size_t n, std::size_t k, std::uint64_t seed) {
  const auto pts = mt::random_points(n, seed);
  return geom::knn(pts, pts, k);
}

// ---- linear ----------------------------------------------------------------

TEST(Linear, IdentityAndBias) {
  const Tensor x = mt::random_tensor({3, 4}, 1);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  const Tensor y = forward({x, eye, Tensor({4})}, [](Tape& t, const std::vector<Var>& v) {
    return ad::linear(t, v[0], v[1], v[2]);
  });
  EXPECT_EQ(y.storage(), x.storage());
  const Tensor b = mt::random_tensor({2}, 2);
  const Tensor z = forward({Tensor({5, 4}), mt::random_tensor({2, 4}, 3), b},
                           [](Tape& t, const std::vector<Var>& v) { return ad::linear(t, v[0], v[1], v[2]); });
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(z[r * 2 + c], b[c]);
}

TEST(Linear, GradientAndShapeErrors) {
  const OpFn op = [](Tape& t, const std::vector<Var>& v) { return ad::linear(t, v[0], v[1], v[2]); };
  EXPECT_LT(op_grad_error({mt::random_tensor({3, 4}, 4), mt::random_tensor({5, 4}, 5), mt::random_tensor({5}, 6)}, op),
            1e-6);
  EXPECT_LT(op_grad_error({mt::random_tensor({2, 3, 4}, 7), mt::random_tensor({2, 4}, 8), mt::random_tensor({2}, 9)}, op),
            1e-6);
  EXPECT_EQ(kind_of([&] { forward({Tensor({3, 4}), Tensor({5, 3}), Tensor({5})}, op); }), ErrorKind::kShape);
  EXPECT_EQ(kind_of([&] { forward({Tensor({3, 4}), Tensor({5, 4}), Tensor({4})}, op); }), ErrorKind::kShape);
}

// ---- batchnorm -------------------------------------------------------------

struct NormFixture {
  ParameterStore store;
  std::size_t scale, shift, stats;
  explicit NormFixture(std::size_t d) {
    scale = store.add("bn.scale", ParamKind::kNormScale, Tensor({d}, 1.0));
    shift = store.add("bn.shift", ParamKind::kNormShift, Tensor({d}, 0.0));
    stats = store.add_stats("bn", d);
  }
  Tensor run(const Tensor& x, NormMode mode, bool update = true) {
    TapeOptions o;
    o.norm_mode = mode;
    o.update_running_stats = update;
    Tape t(&store, o);
    return t.value(ad::batchnorm(t, t.input(x), t.param(scale), t.param(shift), stats));
  }
};

TEST(BatchNorm, ConstantChannelGivesShift) {
  NormFixture f(3);
  f.store.param(f.shift).value = Tensor({3}, std::vector<double>{0.5, -1.0, 2.0});
  Tensor x({2, 5, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 4.0 + static_cast<double>(i % 3);
  const Tensor y = f.run(x, NormMode::kTrain);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], f.store.param(f.shift).value[i % 3]);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  NormFixture f(2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Tensor x({400, 2});
  for (double& v : x.values()) v = g(rng);
  for (std::size_t c = 0; c < 2; ++c) {  // exact zero mean, unit biased variance
    double m = 0.0, s = 0.0;
    for (std::size_t r = 0; r < 400; ++r) m += x[r * 2 + c];
    m /= 400.0;
    for (std::size_t r = 0; r < 400; ++r) s += (x[r * 2 + c] - m) * (x[r * 2 + c] - m);
    s = std::sqrt(s / 400.0);
    for (std::size_t r = 0; r < 400; ++r) x[r * 2 + c] = (x[r * 2 + c] - m) / s;
  }
  const Tensor y = f.run(x, NormMode::kTrain);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-3);
}

TEST(BatchNorm, RunningStatisticsMomentum) {
  NormFixture f(1);
  Tensor x({4, 1}, std::vector<double>{1.0, 2.0, 3.0, 6.0});  // mean 3, biased variance 3.5
  f.run(x, NormMode::kTrain);
  const auto& s = f.store.stats(f.stats);
  EXPECT_DOUBLE_EQ(s.mean[0], 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(s.var[0], 0.9 * 1.0 + 0.1 * 3.5);
  EXPECT_EQ(s.updates, 1u);
  f.run(x, NormMode::kTrain, false);
  EXPECT_EQ(s.updates, 1u);
  const Tensor y = f.run(x, NormMode::kEval);
  EXPECT_DOUBLE_EQ(y[0], (1.0 - 0.3) / std::sqrt(1.25 + 1e-5));
}

TEST(BatchNorm, EvalBeforeTrainingIsAnError) {
  NormFixture f(3);
  EXPECT_EQ(kind_of([&] { f.run(Tensor({2, 3}), NormMode::kEval); }), ErrorKind::kUninitializedStats);
}

TEST(BatchNorm, Gradients) {
  ParameterStore holder;
  const std::size_t stats = holder.add_stats("bn", 3);
  (void)stats;
  const OpFn op = [](Tape& t, const std::vector<Var>& v) { return ad::batchnorm(t, v[0], v[1], v[2], 0); };
  // Statistics slot 0 lives in the op-check store; register it there.
  ParameterStore store;
  store.add("x", ParamKind::kWeight, mt::random_tensor({2, 5, 3}, 11));
  store.add("scale", ParamKind::kNormScale, mt::random_tensor({3}, 12, 2.0));
  store.add("shift", ParamKind::kNormShift, mt::random_tensor({3}, 13));
  store.add_stats("bn", 3);
  const Tensor w = mt::random_tensor({2, 5, 3}, 14);
  const auto closure = [&](Tape& t) { return ad::weighted_sum(t, op(t, {t.param(0), t.param(1), t.param(2)}), w); };
  ad::GradCheckOptions o;
  o.norm_mode = NormMode::kTrain;
  EXPECT_LT(ad::grad_check(closure, store, o).max_rel_error, 1e-5);
  store.stats(0).updates = 1;
  store.stats(0).mean = mt::random_tensor({3}, 15);
  o.norm_mode = NormMode::kEval;
  EXPECT_LT(ad::grad_check(closure, store, o).max_rel_error, 1e-7);
}

// ---- relu / concat ---------------------------------------------------------

TEST(Relu, ValuesAndIndicatorGradient) {
  const OpFn op = [](Tape& t, const std::vector<Var>& v) { return ad::relu(t, v[0]); };
  Tensor neg({4}, std::vector<double>{-1.0, -2.0, -0.5, -3.0});
  for (double v : forward_values({neg}, op)) EXPECT_EQ(v, 0.0);
  Tensor pos({3}, std::vector<double>{1.0, 2.0, 0.5});
  EXPECT_EQ(forward({pos}, op).storage(), pos.storage());

  Tape t;
  Tensor mixed({5}, std::vector<double>{-1.0, 2.0, 0.0, 3.0, -0.1});
  Var x = t.input(mixed);
  t.backward(ad::sum(t, ad::relu(t, x)));
  EXPECT_EQ(t.grad(x).storage(), (std::vector<double>{0.0, 1.0, 0.0, 1.0, 0.0}));
}

TEST(Concat, ValuesGradientAndErrors) {
  const Tensor a({1, 2}, std::vector<double>{1.0, 2.0});
  const Tensor b({1, 2}, std::vector<double>{3.0, 4.0});
  const OpFn one = [](Tape& t, const std::vector<Var>& v) { return ad::concat(t, {v[0]}); };
  EXPECT_EQ(forward({a}, one).storage(), a.storage());
  const OpFn two = [](Tape& t, const std::vector<Var>& v) { return ad::concat(t, {v[0], v[1]}); };
  EXPECT_EQ(forward({a, b}, two).storage(), (std::vector<double>{1.0, 2.0, 3.0, 4.0}));

  Tape t;
  Var x = t.input(a), y = t.input(b);
  t.backward(ad::sum(t, ad::concat(t, {x, y})));
  EXPECT_EQ(t.grad(x).storage(), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(t.grad(y).storage(), (std::vector<double>{1.0, 1.0}));

  EXPECT_LT(op_grad_error({mt::random_tensor({4, 3}, 21), mt::random_tensor({4, 5}, 22)}, two), 1e-8);
  EXPECT_EQ(kind_of([&] { forward({Tensor({2, 2}), Tensor({3, 2})}, two); }), ErrorKind::kShape);
}

// ---- neighborhood ops ------------------------------------------------------

TEST(Gather, SelfGraphConstantFieldAndAccumulation) {
  const OpFn op1 = [g = random_graph(6, 1, 31)](Tape& t, const std::vector<Var>& v) {
    return ad::gather_neighbors(t, v[0], g);
  };
  const Tensor f = mt::random_tensor({6, 4}, 32);
  EXPECT_EQ(forward({f}, op1).storage(), f.storage());

  const Tensor c({6, 2}, 3.5);
  const OpFn op3 = [g = random_graph(6, 3, 33)](Tape& t, const std::vector<Var>& v) {
    return ad::gather_neighbors(t, v[0], g);
  };
  for (double v : forward_values({c}, op3)) EXPECT_EQ(v, 3.5);

  // Point 2 is referenced by both neighborhoods 0 and 1.
  const NeighborGraph g5 = make_graph(2, {0, 2, 1, 2, 2, 3, 3, 4, 4, 0});
  Tape t;
  Var x = t.input(mt::random_tensor({5, 1}, 34));
  t.backward(ad::sum(t, ad::gather_neighbors(t, x, g5)));
  EXPECT_EQ(t.grad(x).storage(), (std::vector<double>{2.0, 1.0, 3.0, 2.0, 2.0}));
  const OpFn op5 = [g5](Tape& tp, const std::vector<Var>& v) { return ad::gather_neighbors(tp, v[0], g5); };
  EXPECT_LT(op_grad_error({mt::random_tensor({5, 3}, 35)}, op5), 1e-8);

  const NeighborGraph bad = make_graph(1, {0, 7});
  EXPECT_EQ(kind_of([&] {
              forward({Tensor({2, 1})}, [&](Tape& tp, const std::vector<Var>& v) {
                return ad::gather_neighbors(tp, v[0], bad);
              });
            }),
            ErrorKind::kShape);
}

TEST(Pool, IdentityMeanAndMaxGradient) {
  const Tensor x1 = mt::random_tensor({4, 1, 3}, 41);
  for (auto mode : {PoolMode::kMax, PoolMode::kMean}) {
    const Tensor y = forward({x1}, [mode](Tape& t, const std::vector<Var>& v) {
      return ad::pool_neighborhood(t, v[0], mode);
    });
    EXPECT_EQ(y.storage(), x1.storage());
    EXPECT_EQ(y.shape(), (ad::Shape{4, 3}));
  }
  for (double v : forward_values({Tensor({3, 4, 2}, -1.25)}, [](Tape& t, const std::vector<Var>& v) {
         return ad::pool_neighborhood(t, v[0], PoolMode::kMean);
       }))
    EXPECT_EQ(v, -1.25);
  const OpFn mx = [](Tape& t, const std::vector<Var>& v) { return ad::pool_neighborhood(t, v[0], PoolMode::kMax); };
  const OpFn mn = [](Tape& t, const std::vector<Var>& v) { return ad::pool_neighborhood(t, v[0], PoolMode::kMean); };
  EXPECT_LT(op_grad_error({mt::random_tensor({4, 3, 2}, 42)}, mx), 1e-6);
  EXPECT_LT(op_grad_error({mt::random_tensor({4, 3, 2}, 43)}, mn), 1e-8);
}

TEST(Pool, MaxTieGradientGoesToLowestSlot) {
  Tape t;
  Var x = t.input(Tensor({1, 3, 1}, std::vector<double>{2.0, 5.0, 5.0}));
  t.backward(ad::sum(t, ad::pool_neighborhood(t, x, PoolMode::kMax)));
  EXPECT_EQ(t.grad(x).storage(), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(PairwiseDiff, ZerosAndGradient) {
  const auto pts = mt::random_points(5, 51);
  const NeighborGraph g = geom::knn(pts, pts, 3);
  const OpFn op = [g](Tape& t, const std::vector<Var>& v) { return ad::pairwise_diff(t, v[0], g); };
  for (double v : forward_values({Tensor({5, 4}, 2.0)}, op)) EXPECT_EQ(v, 0.0);
  const Tensor y = forward({mt::random_tensor({5, 4}, 52)}, op);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(y[(i * 3) * 4 + c], 0.0);
  EXPECT_LT(op_grad_error({mt::random_tensor({5, 4}, 53)}, op), 1e-6);

  // Summing out[i][m] gives +1 per reference as neighbor and -k per center.
  Tape t;
  Var x = t.input(mt::random_tensor({5, 1}, 54));
  t.backward(ad::sum(t, ad::pairwise_diff(t, x, g)));
  std::vector<double> want(5, -3.0);
  for (std::size_t idx : g.indices) want[idx] += 1.0;
  EXPECT_EQ(t.grad(x).storage(), want);
}

TEST(Interpolate, CopyConstantAndGradient) {
  const auto src = mt::random_points(6, 61);
  auto tgt = mt::random_points(9, 62);
  tgt[0] = src[4];
  const auto plan = geom::interp3nn_weights(src, tgt);
  const OpFn op = [plan](Tape& t, const std::vector<Var>& v) { return ad::interpolate(t, v[0], plan); };
  const Tensor f = mt::random_tensor({6, 3}, 63);
  const Tensor y = forward({f}, op);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y[c], f[4 * 3 + c]);
  for (double v : forward_values({Tensor({6, 2}, 7.0)}, op)) EXPECT_NEAR(v, 7.0, 1e-12);
  EXPECT_LT(op_grad_error({mt::random_tensor({6, 3}, 64)}, op), 1e-8);
  EXPECT_EQ(kind_of([&] { forward({Tensor({5, 3})}, op); }), ErrorKind::kShape);
}

TEST(NormalizeRows, UnitOutputsGradientAndDegenerateRows) {
  const OpFn op = [](Tape& t, const std::vector<Var>& v) { return ad::normalize_rows(t, v[0]); };
  const Tensor y = forward({mt::random_tensor({6, 3}, 71)}, op);
  for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(Vec3(y[3 * r], y[3 * r + 1], y[3 * r + 2]).norm(), 1.0, 1e-9);
  EXPECT_LT(op_grad_error({mt::random_tensor({6, 3}, 72)}, op), 1e-6);

  Tape t;
  std::vector<std::uint8_t> flags;
  Var x = t.input(Tensor({2, 3}, std::vector<double>{1e-9, 0.0, 0.0, 0.0, 3.0, 4.0}));
  Var n = ad::normalize_rows(t, x, &flags);
  EXPECT_EQ(flags, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(t.value(n).storage(), (std::vector<double>{0.0, 0.0, 1.0, 0.0, 0.6, 0.8}));
  t.backward(ad::sum(t, n));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t.grad(x)[c], 0.0);
}

TEST(FusedOps, MatchTheComposedOperations) {
  const auto pts = mt::random_points(12, 81);
  const NeighborGraph g = geom::knn(pts, pts, 4);
  const Tensor f = mt::random_tensor({12, 5}, 82);
  const Tensor rel = mt::random_tensor({12, 4, 3}, 83);
  const Tensor w = mt::random_tensor({6, 8}, 84);
  const Tensor b = mt::random_tensor({6}, 85);
  const Tensor fused = forward({f, rel, w, b}, [g](Tape& t, const std::vector<Var>& v) {
    return ad::edge_linear(t, v[0], v[1], g, v[2], v[3]);
  });
  const Tensor composed = forward({f, rel, w, b}, [g](Tape& t, const std::vector<Var>& v) {
    return ad::linear(t, ad::concat(t, {v[1], ad::gather_neighbors(t, v[0], g)}), v[2], v[3]);
  });
  ASSERT_EQ(fused.shape(), composed.shape());
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], composed[i], 1e-12);

  const Tensor w2 = mt::random_tensor({6, 5}, 86);
  const Tensor d1 = forward({f, w2, b}, [g](Tape& t, const std::vector<Var>& v) {
    return ad::diff_linear(t, v[0], g, v[1], v[2]);
  });
  const Tensor d2 = forward({f, w2, b}, [g](Tape& t, const std::vector<Var>& v) {
    return ad::linear(t, ad::pairwise_diff(t, v[0], g), v[1], v[2]);
  });
  for (std::size_t i = 0; i < d1.size(); ++i) EXPECT_NEAR(d1[i], d2[i], 1e-12);

  EXPECT_LT(op_grad_error({f, w, b}, [g, rel](Tape& t, const std::vector<Var>& v) {
              return ad::edge_linear(t, v[0], t.constant(rel), g, v[1], v[2]);
            }),
            1e-7);
  EXPECT_EQ(kind_of([&] {
              forward({f, rel, w, b}, [g](Tape& t, const std::vector<Var>& v) {
                Var r = t.input(t.value(v[1]), true);
                return ad::edge_linear(t, v[0], r, g, v[2], v[3]);
              });
            }),
            ErrorKind::kInvalidArgument);
  EXPECT_LT(op_grad_error({f, w2, b}, [g](Tape& t, const std::vector<Var>& v) {
              return ad::diff_linear(t, v[0], g, v[1], v[2]);
            }),
            1e-7);
}

TEST(Randomized, EveryDifferentiableOpPassesFiniteDifferences) {
  std::mt19937_64 rng(91);
  for (int inst = 0; inst < 6; ++inst) {
    const std::size_t n = 3 + rng() % 6, k = 1 + rng() % 3, d = 1 + rng() % 16;
    const auto pts = mt::random_points(n, 92 + inst);
    const NeighborGraph g = geom::knn(pts, pts, std::min(k, n));
    const Tensor f = mt::random_tensor({n, d}, 93 + inst);
    EXPECT_LT(op_grad_error({f}, [g](Tape& t, const std::vector<Var>& v) {
                return ad::pool_neighborhood(t, ad::gather_neighbors(t, v[0], g), PoolMode::kMean);
              }),
              1e-7);
    EXPECT_LT(op_grad_error({f}, [g](Tape& t, const std::vector<Var>& v) {
                return ad::pool_neighborhood(t, ad::pairwise_diff(t, v[0], g), PoolMode::kMax);
              }),
              1e-6);
    EXPECT_LT(op_grad_error({mt::random_tensor({n, 8, d}, 94 + inst)}, [](Tape& t, const std::vector<Var>& v) {
                return ad::relu(t, ad::scale(t, v[0], 1.5));
              }),
              1e-5);  // up to 1024 summands; small reduction weights hit the rounding floor
  }
}

TEST(Equivariance, NeighborhoodOpsCommuteWithRelabeling) {
  const std::size_t n = 10, k = 4, d = 3;
  const auto pts = mt::random_points(n, 101);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(102));
  std::vector<Vec3> ppts(n);
  for (std::size_t i = 0; i < n; ++i) ppts[i] = pts[perm[i]];  // new row i = old row perm[i]
  const NeighborGraph g = geom::knn(pts, pts, k);
  const NeighborGraph pg = geom::knn(ppts, ppts, k);
  const Tensor f = mt::random_tensor({n, d}, 103);
  Tensor pf({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) pf[i * d + c] = f[perm[i] * d + c];

  auto pool_of = [&](const Tensor& x, const NeighborGraph& gr, bool diff, PoolMode mode) {
    return forward({x}, [&](Tape& t, const std::vector<Var>& v) {
      return ad::pool_neighborhood(t, diff ? ad::pairwise_diff(t, v[0], gr) : ad::gather_neighbors(t, v[0], gr), mode);
    });
  };
  for (bool diff : {false, true})
    for (auto mode : {PoolMode::kMax, PoolMode::kMean}) {
      const Tensor a = pool_of(f, g, diff, mode), b = pool_of(pf, pg, diff, mode);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(b[i * d + c], a[perm[i] * d + c], 1e-12);
    }

  const auto src = mt::random_points(6, 104);
  const auto plan = geom::interp3nn_weights(src, pts);
  const auto pplan = geom::interp3nn_weights(src, ppts);
  const Tensor s = mt::random_tensor({6, d}, 105);
  const OpFn op = [&](Tape& t, const std::vector<Var>& v) { return ad::interpolate(t, v[0], plan); };
  const OpFn pop = [&](Tape& t, const std::vector<Var>& v) { return ad::interpolate(t, v[0], pplan); };
  const Tensor a = forward({s}, op), b = forward({s}, pop);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(b[i * d + c], a[perm[i] * d + c], 1e-12);
}

// ---- tape lifecycle --------------------------------------------------------

TEST(ReverseSweep, SumOfParametersUnusedParameterAndStaleGraph) {
  ParameterStore store;
  store.add("a", ParamKind::kWeight, mt::random_tensor({2, 3}, 111));
  store.add("unused", ParamKind::kBias, mt::random_tensor({4}, 112));
  store.add("b", ParamKind::kBias, mt::random_tensor({3}, 113));
  Tape t(&store);
  Var loss = ad::add(t, ad::sum(t, t.param(0)), ad::sum(t, t.param(2)));
  t.backward(loss);
  const auto g = t.parameter_gradients();
  ASSERT_EQ(g.size(), 13u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(g[i], 1.0);
  for (std::size_t i = 6; i < 10; ++i) EXPECT_EQ(g[i], 0.0);
  for (std::size_t i = 10; i < 13; ++i) EXPECT_EQ(g[i], 1.0);
  EXPECT_EQ(kind_of([&] { t.backward(loss); }), ErrorKind::kLifecycle);
  EXPECT_EQ(kind_of([&] { ad::sum(t, t.param(0)); }), ErrorKind::kLifecycle);
}

TEST(ReverseSweep, GradientsBeforeSweepAndNonScalarSeed) {
  Tape t;
  Var x = t.input(Tensor({3}, 1.0));
  EXPECT_EQ(kind_of([&] { t.grad(x); }), ErrorKind::kLifecycle);
  EXPECT_EQ(kind_of([&] { t.backward(x); }), ErrorKind::kShape);
}

TEST(Forward, NonFiniteValuesAreNumericErrors) {
  Tape t;
  Var x = t.input(Tensor({2}, std::numeric_limits<double>::max()));
  EXPECT_EQ(kind_of([&] { ad::scale(t, x, 10.0); }), ErrorKind::kNumeric);
}

TEST(GradCheck, LinearOnlyIsExactToRounding) {
  ParameterStore store;
  store.add("w", ParamKind::kWeight, mt::random_tensor({4, 3}, 121));
  store.add("b", ParamKind::kBias, mt::random_tensor({4}, 122));
  const Tensor x = mt::random_tensor({5, 3}, 123);
  const Tensor w = mt::random_tensor({5, 4}, 124);
  const auto closure = [&](Tape& t) { return ad::weighted_sum(t, ad::linear(t, t.constant(x), t.param(0), t.param(1)), w); };
  EXPECT_LT(ad::grad_check(closure, store).max_rel_error, 1e-8);
}

TEST(GradCheck, LinearReluMeanAwayFromKinks) {
  ParameterStore store;
  store.add("w", ParamKind::kWeight, mt::random_tensor({6, 3}, 131));
  store.add("b", ParamKind::kBias, mt::random_tensor({6}, 132));
  const Tensor x = mt::random_tensor({8, 3}, 133);
  const auto closure = [&](Tape& t) {
    return ad::mean(t, ad::relu(t, ad::linear(t, t.constant(x), t.param(0), t.param(1))));
  };
  {
    Tape t(&store);
    const Tensor pre = t.value(ad::linear(t, t.constant(x), t.param(0), t.param(1)));
    for (double v : pre.values()) ASSERT_GT(std::abs(v), 1e-3);
  }
  ad::GradCheckOptions o;
  o.freeze_branches = false;
  EXPECT_LT(ad::grad_check(closure, store, o).max_rel_error, 1e-6);
}

TEST(GradCheck, NonDeterministicClosureIsDetected) {
  ParameterStore store;
  store.add("w", ParamKind::kWeight, Tensor({1}, 1.0));
  int calls = 0;
  const auto closure = [&](Tape& t) { return ad::scale(t, t.param(0), static_cast<double>(++calls)); };
  EXPECT_EQ(kind_of([&] { ad::grad_check(closure, store); }), ErrorKind::kDeterminism);
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(ad::relative_error(0.0, 0.0, 1e-10), 0.0);
  EXPECT_DOUBLE_EQ(ad::relative_error(1e-12, 0.0, 1e-10), 1e-2);
  EXPECT_DOUBLE_EQ(ad::relative_error(2.0, 1.0, 1e-10), 0.5);
}

// ---- parameter store -------------------------------------------------------

TEST(ParameterStore, FlatOrderingInitializationAndDuplicates) {
  auto build = [] {
    ParameterStore s;
    s.add("w", ParamKind::kWeight, Tensor({8, 6}));
    s.add("b", ParamKind::kBias, Tensor({8}, 3.0));
    s.add("g", ParamKind::kNormScale, Tensor({8}, 0.0));
    s.add("h", ParamKind::kNormShift, Tensor({8}, 2.0));
    s.initialize(5);
    return s;
  };
  const ParameterStore a = build(), b = build();
  EXPECT_EQ(a.flatten(), b.flatten());
  EXPECT_EQ(a.learnable_count(), 72u);
  EXPECT_EQ(a.offsets(), (std::vector<std::size_t>{0, 48, 56, 64}));
  const double bound = std::sqrt(6.0 / 6.0);
  for (double v : a.param(0).value.values()) EXPECT_LE(std::abs(v), bound);
  for (double v : a.param(1).value.values()) EXPECT_EQ(v, 0.0);
  for (double v : a.param(2).value.values()) EXPECT_EQ(v, 1.0);
  for (double v : a.param(3).value.values()) EXPECT_EQ(v, 0.0);
  ParameterStore c;
  c.add("w", ParamKind::kWeight, Tensor({1}));
  EXPECT_EQ(kind_of([&] { c.add("w", ParamKind::kWeight, Tensor({1})); }), ErrorKind::kInvalidArgument);
}

TEST(Checkpoint, BitExactRoundTripAndErrors) {
  mt::TempDir dir("ckpt");
  auto net = std::make_unique<msecnet::model::Network>(msecnet::model::tiny_config(), 3);
  const auto g = msecnet::model::build_geometry(mt::sheet_patch(32, 4), net->config());
  mt::warm_up(*net, g);
  net->params().save(dir.file("a.bin"));
  msecnet::model::Network other(msecnet::model::tiny_config(), 99);
  other.params().load(dir.file("a.bin"));
  const auto fa = net->params().flatten(), fb = other.params().flatten();
  ASSERT_EQ(fa.size(), fb.size());
  EXPECT_EQ(std::memcmp(fa.data(), fb.data(), fa.size() * sizeof(double)), 0);
  for (std::size_t s = 0; s < net->params().all_stats().size(); ++s) {
    const auto& x = net->params().stats(s);
    const auto& y = other.params().stats(s);
    EXPECT_EQ(x.mean.storage(), y.mean.storage());
    EXPECT_EQ(x.var.storage(), y.var.storage());
    EXPECT_EQ(x.updates, y.updates);
  }
  other.params().save(dir.file("b.bin"));
  std::ifstream ia(dir.file("a.bin"), std::ios::binary), ib(dir.file("b.bin"), std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(ia)), {}), sb((std::istreambuf_iterator<char>(ib)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(sa.substr(0, 8), "MSECCKPT");

  std::ofstream(dir.file("junk.bin")) << "not a checkpoint";
  EXPECT_EQ(kind_of([&] { other.params().load(dir.file("junk.bin")); }), ErrorKind::kParse);
  std::ofstream(dir.file("short.bin"), std::ios::binary) << sa.substr(0, sa.size() / 2);
  EXPECT_EQ(kind_of([&] { other.params().load(dir.file("short.bin")); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([&] { other.params().load(dir.file("missing.bin")); }), ErrorKind::kIo);
  msecnet::model::Network bigger(msecnet::model::desk_config());
  EXPECT_EQ(kind_of([&] { bigger.params().load(dir.file("a.bin")); }), ErrorKind::kConsistency);
}

}  // namespace
