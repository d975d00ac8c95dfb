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

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "support.hpp"

namespace {

using msecnet::ErrorKind;
using msecnet::ad::NormMode;
using msecnet::ad::Tape;
using msecnet::ad::TapeOptions;
using msecnet::ad::Tensor;
using msecnet::geom::Vec3;
using msecnet::model::ModelConfig;
using msecnet::model::Network;
using msecnet::model::PatchGeometry;
namespace ad = msecnet::ad;
namespace model = msecnet::model;
namespace mt = msecnet::testing;
namespace run = msecnet::run;

std::size_t lbr(std::size_t in, std::size_t out) { return in * out + out + 2 * out; }

/// Learnable scalars counted from layer widths, independent of the store.
std::size_t expected_scalars(const ModelConfig& c) {
  const auto& b = c.backbone;
  const auto& m = c.msec;
  std::size_t n = lbr(3, b.first_dim) + lbr(b.first_dim, b.d_out) + (b.d_out * 3 + 3);
  for (std::size_t s = 0; s + 1 < b.stages; ++s) {
    const std::size_t lo = b.stage_dim(s), hi = b.stage_dim(s + 1);
    n += lbr(lo + 3, hi) + lbr(hi, hi) + (lo * hi + hi) + lbr(lo + hi, lo);
  }
  if (!m.use_stream) return n;
  const std::size_t d = m.d_fused;
  std::size_t fused_in = 0;
  for (std::size_t s = 0; s < m.s_used; ++s) fused_in += b.stage_dim(s);
  n += lbr(fused_in, d);
  if (m.use_space_transform) n += lbr(d + 3, d) + lbr(d, d);
  if (m.use_channel_transform) n += 2 * lbr(d, d);
  if (m.use_adaptivity) n += 4 * lbr(d, d);
  n += lbr((m.use_conditioning && !m.edge_only ? b.d_out : 0) + d, b.d_out);
  return n;
}

ModelConfig ablated(ModelConfig c, const std::string& name) {
  run::Json j = run::to_json(c);
  run::Json cfg{{"model", j}};
  run::apply_ablation(cfg, name);
  cfg["model"]["preset"] = "desk";
  return run::parse_model(cfg["model"]);
}

/// A very small configuration for exhaustive finite-difference sweeps.
ModelConfig micro_config() {
  ModelConfig c = model::tiny_config();
  c.backbone.first_dim = 4;
  c.backbone.d_out = 8;
  c.msec.d_fused = 16;
  return c;
}

TEST(Stream, FullConfigurationLayerWidths) {
  const Network net(model::full_config());
  const auto& s = net.stream();
  EXPECT_EQ(s.fuse_layer().in(), 960u);
  EXPECT_EQ(s.fuse_layer().out(), 1024u);
  EXPECT_EQ(s.space_layer().edge.in, 1027u);
  EXPECT_EQ(s.space_layer().edge.out, 1024u);
  EXPECT_EQ(s.condition_layer().in(), 1152u);
  EXPECT_EQ(s.condition_layer().out(), 128u);
  EXPECT_EQ(net.head().in, 128u);
  EXPECT_EQ(net.head().out, 3u);
}

TEST(Stream, ParameterCountsMatchLayerArithmetic) {
  for (const ModelConfig& base : {model::desk_config(), model::tiny_config(), model::full_config()}) {
    EXPECT_EQ(Network(base).params().learnable_count(), expected_scalars(base));
    for (const auto& name : run::ablation_names()) {
      const ModelConfig c = ablated(base, name);
      EXPECT_EQ(Network(c).params().learnable_count(), expected_scalars(c)) << name;
    }
  }
  std::size_t previous = 0;
  for (std::size_t d : {256u, 512u, 1024u}) {
    ModelConfig c = model::full_config();
    c.msec.d_fused = d;
    const std::size_t n = Network(c).params().learnable_count();
    EXPECT_EQ(n, expected_scalars(c));
    EXPECT_GT(n, previous);
    previous = n;
  }
}

TEST(Stream, AblationNamesSetTheirFlags) {
  const ModelConfig d = model::desk_config();
  EXPECT_FALSE(ablated(d, "no_msec_stream").msec.use_stream);
  EXPECT_FALSE(ablated(d, "no_space_transform").msec.use_space_transform);
  EXPECT_FALSE(ablated(d, "no_channel_transform").msec.use_channel_transform);
  EXPECT_FALSE(ablated(d, "no_adaptivity").msec.use_adaptivity);
  EXPECT_FALSE(ablated(d, "no_conditioning").msec.use_conditioning);
  EXPECT_TRUE(ablated(d, "edge_only").msec.edge_only);
  EXPECT_EQ(ablated(d, "gradual_interpolation").msec.interpolation, model::Interpolation::kGradual);
  run::Json cfg = run::Json::object();
  try {
    run::apply_ablation(cfg, "no_backbone");
    FAIL();
  } catch (const msecnet::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
  }
}

TEST(Stream, DirectDistributionIsInverseDistanceOfThreeNearest) {
  const ModelConfig cfg = model::desk_config();
  Network net(cfg, 5);
  const auto pts = mt::random_points(128, 81, 0.7);
  const PatchGeometry g = model::build_geometry(pts, cfg);
  Tape t(&net.params());
  const auto pyr = net.backbone().encode(t, g);
  const auto dist = net.stream().distribute_scales(t, g, pyr);
  ASSERT_EQ(dist.size(), 4u);
  for (std::size_t s = 1; s < 4; ++s) {
    const Tensor& src = t.value(pyr.features[s]);
    const Tensor& out = t.value(dist[s]);
    const auto& coords = g.stage_coords[s];
    const std::size_t w = src.cols();
    ASSERT_EQ(out.shape(), (ad::Shape{128, w}));
    for (std::size_t i = 0; i < 128; ++i) {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t j = 0; j < coords.size(); ++j) d.push_back({(coords[j] - pts[i]).norm(), j});
      std::sort(d.begin(), d.end());
      std::vector<double> want(w, 0.0);
      if (d[0].first < 1e-12) {
        for (std::size_t c = 0; c < w; ++c) want[c] = src[d[0].second * w + c];
      } else {
        double total = 0.0;
        for (int m = 0; m < 3; ++m) total += 1.0 / (d[m].first + 1e-8);
        for (int m = 0; m < 3; ++m)
          for (std::size_t c = 0; c < w; ++c) want[c] += src[d[m].second * w + c] / (d[m].first + 1e-8) / total;
      }
      for (std::size_t c = 0; c < w; ++c) ASSERT_NEAR(out[i * w + c], want[c], 1e-10) << "stage " << s << " row " << i;
    }
  }
}

TEST(Stream, GradualDistributionKeepsSampledPointsExact) {
  ModelConfig cfg = model::desk_config();
  cfg.msec.interpolation = model::Interpolation::kGradual;
  Network net(cfg, 6);
  const PatchGeometry g = model::build_geometry(mt::random_points(128, 82, 0.7), cfg);
  Tape t(&net.params());
  const auto pyr = net.backbone().encode(t, g);
  const auto dist = net.stream().distribute_scales(t, g, pyr);
  for (std::size_t s = 1; s < 4; ++s) {
    const Tensor& src = t.value(pyr.features[s]);
    const Tensor& out = t.value(dist[s]);
    const std::size_t w = src.cols();
    for (std::size_t q = 0; q < g.rows(s); ++q)
      for (std::size_t c = 0; c < w; ++c) EXPECT_EQ(out[g.stage_index[s][q] * w + c], src[q * w + c]);
  }
}

TEST(Stream, SingleScaleUsesOnlyTheFirstStage) {
  ModelConfig cfg = model::desk_config();
  cfg.msec.s_used = 1;
  Network net(cfg, 7);
  EXPECT_EQ(net.stream().fuse_layer().in(), cfg.backbone.first_dim);
  const PatchGeometry g = model::build_geometry(mt::random_points(128, 83, 0.7), cfg);
  Tape t(&net.params());
  const auto out = net.forward(t, g);
  EXPECT_EQ(t.value(out.normals).shape(), (ad::Shape{128, 3}));
}

TEST(Stream, FixedLaplacianIsMeanOfNeighborDifferences) {
  ModelConfig cfg = model::desk_config();
  cfg.msec.use_adaptivity = false;
  Network net(cfg, 8);
  const auto pts = mt::random_points(128, 84, 0.7);
  const PatchGeometry g = model::build_geometry(pts, cfg);
  Tape t(&net.params());
  const auto out = net.forward(t, g);
  const Tensor& ms = t.value(out.stream->ms);
  const Tensor& edges = t.value(out.stream->edges);
  const std::size_t w = ms.cols();
  const auto graph = msecnet::geom::knn(pts, pts, cfg.msec.k_edge);
  for (std::size_t i = 0; i < 128; ++i)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < graph.k; ++m) acc += ms[graph.indices[i * graph.k + m] * w + c] - ms[i * w + c];
      ASSERT_NEAR(edges[i * w + c], acc / static_cast<double>(graph.k), 1e-12);
    }
}

TEST(Stream, ResidualMultiScaleFeatureAndConditioningVariants) {
  const auto pts = mt::random_points(128, 85, 0.7);
  for (const std::string variant : {"", "no_conditioning", "edge_only", "no_space_transform", "no_channel_transform"}) {
    const ModelConfig cfg = variant.empty() ? model::desk_config() : ablated(model::desk_config(), variant);
    Network net(cfg, 9);
    const PatchGeometry g = model::build_geometry(pts, cfg);
    Tape t(&net.params());
    const auto out = net.forward(t, g);
    const auto& e = *out.stream;
    const Tensor& fused = t.value(e.fused);
    const Tensor& ms = t.value(e.ms);
    const Tensor branch = cfg.msec.use_channel_transform ? t.value(e.spch) : t.value(e.space);
    for (std::size_t i = 0; i < ms.size(); ++i) ASSERT_EQ(ms[i], fused[i] + branch[i]) << variant;
    const Tensor& bb = t.value(out.backbone);
    const Tensor& cond = t.value(e.conditioned);
    ASSERT_EQ(cond.shape(), bb.shape());
    const std::size_t width = net.stream().condition_layer().in();
    if (variant == "edge_only" || variant == "no_conditioning") {
      EXPECT_EQ(width, cfg.msec.d_fused) << variant;
    } else {
      EXPECT_EQ(width, cfg.msec.d_fused + cfg.backbone.d_out) << variant;
    }
    bool differs = false;
    for (std::size_t i = 0; i < cond.size(); ++i) {
      if (variant == "edge_only") {
        EXPECT_GE(cond[i], 0.0);  // γ alone, rectified
      } else {
        EXPECT_GE(cond[i], bb[i]);  // backbone plus a rectified correction
      }
      differs = differs || cond[i] != bb[i];
    }
    EXPECT_TRUE(differs) << variant;
  }
}

TEST(Network, NoStreamHeadReadsBackboneDirectly) {
  const ModelConfig cfg = ablated(model::desk_config(), "no_msec_stream");
  Network net(cfg, 10);
  const PatchGeometry g = model::build_geometry(mt::random_points(128, 86, 0.7), cfg);
  Tape t(&net.params());
  const auto out = net.forward(t, g);
  EXPECT_FALSE(out.stream.has_value());
  const Tensor direct = t.value(net.normal_head(t, out.backbone));
  EXPECT_EQ(t.value(out.normals).storage(), direct.storage());
}

TEST(Network, UnitNormalsAndPermutationEquivariance) {
  const ModelConfig cfg = model::desk_config();
  Network net(cfg, 11);
  const auto pts = mt::sheet_patch(128, 87);
  mt::warm_up(net, model::build_geometry(pts, cfg));
  const Tensor a = mt::eval_normals(net, model::build_geometry(pts, cfg));
  for (std::size_t i = 0; i < 128; ++i) EXPECT_NEAR(Vec3(a[3 * i], a[3 * i + 1], a[3 * i + 2]).norm(), 1.0, 1e-12);
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    std::vector<std::size_t> perm(128);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin() + 1, perm.end(), std::mt19937_64(88 + trial));
    std::vector<Vec3> moved(128);
    for (std::size_t i = 0; i < 128; ++i) moved[i] = pts[perm[i]];
    const Tensor b = mt::eval_normals(net, model::build_geometry(moved, cfg));
    double worst = 0.0;
    for (std::size_t i = 0; i < 128; ++i)
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(b[3 * i + c] - a[3 * perm[i] + c]));
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(Network, BreakdownSumsToTotal) {
  const Network net(model::desk_config());
  const auto parts = net.parameter_breakdown();
  std::size_t total = 0;
  for (const auto& [name, n] : parts) total += n;
  EXPECT_EQ(total, net.params().learnable_count());
  EXPECT_TRUE(parts.contains("msec.space"));
  EXPECT_TRUE(parts.contains("head.linear"));
}

class MicroGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(MicroGradient, EveryScalarMatchesFiniteDifferences) {
  const ModelConfig cfg = GetParam().empty() ? micro_config() : ablated(micro_config(), GetParam());
  auto problem = msecnet::check::make_gradcheck_problem(cfg, 32, 1, 3);
  ad::GradCheckOptions options;
  options.h = 1e-5;  // with branches frozen, rounding noise ~ulp/h and truncation ~h^4 are both small
  options.five_point = true;
  const auto report = msecnet::check::run_gradcheck(problem, options);
  ASSERT_EQ(report.checked, problem.net->params().learnable_count());
  // The FD noise floor is about ulp(loss)/h; tiny gradients get an absolute allowance.
  std::size_t bad = 0;
  for (std::size_t i = 0; i < report.checked; ++i) {
    if (std::abs(report.analytic[i] - report.numeric[i]) > 1e-5 * std::abs(report.numeric[i]) + 1e-9) ++bad;
  }
  EXPECT_EQ(bad, 0u) << "worst " << report.worst_param << " analytic " << report.worst_analytic << " numeric "
                     << report.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(Variants, MicroGradient,
                         ::testing::Values("", "no_msec_stream", "no_space_transform", "no_channel_transform",
                                           "no_adaptivity", "no_conditioning", "edge_only", "gradual_interpolation"),
                         [](const auto& info) { return info.param.empty() ? std::string("full") : info.param; });

}  // namespace
