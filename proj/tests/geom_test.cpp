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
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "support.hpp"

namespace {

using msecnet::Error;
using msecnet::ErrorKind;
using msecnet::geom::Mat3;
using msecnet::geom::Vec3;
namespace geom = msecnet::geom;
namespace mt = msecnet::testing;

// Full sort by (squared distance, index); independent of the library's search.
std::vector<std::size_t> brute_knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 d = pts[i] - q;
    all.emplace_back(d.x() * d.x() + d.y() * d.y() + d.z() * d.z(), i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < k; ++m) out.push_back(all[m].second);
  return out;
}

// Greedy selection recomputing every nearest-selected distance from scratch.
std::vector<std::size_t> brute_fps(const std::vector<Vec3>& pts, std::size_t m, std::size_t start) {
  std::vector<std::size_t> sel{start};
  while (sel.size() < m) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double near = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) near = std::min(near, (pts[i] - pts[s]).squaredNorm());
      if (near > best) {
        best = near;
        arg = i;
      }
    }
    sel.push_back(arg);
  }
  return sel;
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

TEST(Knn, HandExample) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {5, 5, 5}};
  const std::vector<Vec3> q{{0, 0, 0}};
  const auto g = geom::knn(pts, q, 2);
  EXPECT_EQ(std::vector<std::size_t>(g.row(0).begin(), g.row(0).end()), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(g.row_distances(0)[0], 0.0);
  EXPECT_EQ(g.row_distances(0)[1], 1.0);
}

TEST(Knn, SelfIsNearest) {
  const auto pts = mt::random_points(300, 3);
  const auto g = geom::knn(pts, pts, 1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(g.row(i)[0], i);
    EXPECT_EQ(g.row_distances(i)[0], 0.0);
  }
}

TEST(Knn, EquidistantTieGoesToLowerIndex) {
  const std::vector<Vec3> pts{{0, 0, 0}, {-1, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const std::vector<Vec3> q{{0, 0, 0}};
  const auto g = geom::knn(pts, q, 4);
  EXPECT_EQ(std::vector<std::size_t>(g.row(0).begin(), g.row(0).end()), (std::vector<std::size_t>{0, 1, 2, 3}));
  geom::KdTree tree(pts, 1);
  std::size_t idx[4];
  double d2[4];
  tree.query(q[0], 4, idx, d2);
  EXPECT_EQ(std::vector<std::size_t>(idx, idx + 4), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Knn, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 3 + rng() % 198;
    const auto pts = inst % 2 ? mt::lattice_points(n, inst) : mt::random_points(n, inst);
    const std::size_t k = 1 + rng() % n;
    const auto queries = mt::random_points(20, 1000 + inst, 1.2);
    const auto g = geom::knn(pts, queries, k);
    geom::KdTree tree(pts, 4);
    std::vector<std::size_t> idx(k);
    std::vector<double> d2(k);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto want = brute_knn(pts, queries[q], k);
      ASSERT_EQ(std::vector<std::size_t>(g.row(q).begin(), g.row(q).end()), want) << "instance " << inst;
      tree.query(queries[q], k, idx.data(), d2.data());
      ASSERT_EQ(idx, want) << "tree, instance " << inst;
      ASSERT_TRUE(std::is_sorted(d2.begin(), d2.end()));
    }
  }
}

TEST(Knn, TreePathMatchesBruteForceOnLargerClouds) {
  for (int inst = 0; inst < 5; ++inst) {
    const auto pts = inst % 2 ? mt::lattice_points(900, inst) : mt::random_points(900, inst);
    const auto g = geom::knn(pts, pts, 16);
    for (std::size_t q = 0; q < pts.size(); q += 37) {
      ASSERT_EQ(std::vector<std::size_t>(g.row(q).begin(), g.row(q).end()), brute_knn(pts, pts[q], 16));
    }
  }
}

TEST(Knn, Errors) {
  const auto pts = mt::random_points(5, 1);
  EXPECT_EQ(kind_of([&] { geom::knn(pts, pts, 6); }), ErrorKind::kInvalidArgument);
  auto bad = pts;
  bad[2].y() = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(kind_of([&] { geom::knn(bad, pts, 2); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { geom::knn(pts, bad, 2); }), ErrorKind::kInvalidArgument);
}

TEST(Fps, CollinearExample) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(i, 0, 0);
  EXPECT_EQ(geom::farthest_point_sample(pts, 3, 0), (std::vector<std::size_t>{0, 9, 4}));
}

TEST(Fps, TrivialSizes) {
  const auto pts = mt::random_points(40, 5);
  EXPECT_EQ(geom::farthest_point_sample(pts, 1, 7), (std::vector<std::size_t>{7}));
  auto all = geom::farthest_point_sample(pts, 40, 3);
  EXPECT_EQ(all.front(), 3u);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> iota(40);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  EXPECT_EQ(all, iota);
  EXPECT_EQ(kind_of([&] { geom::farthest_point_sample(pts, 41, 0); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { geom::farthest_point_sample(pts, 0, 0); }), ErrorKind::kInvalidArgument);
}

TEST(Fps, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(12);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 1 + rng() % 200;
    const auto pts = inst % 2 ? mt::lattice_points(n, 50 + inst) : mt::random_points(n, 50 + inst);
    const std::size_t m = 1 + rng() % std::min<std::size_t>(n, 60);
    const std::size_t start = rng() % n;
    ASSERT_EQ(geom::farthest_point_sample(pts, m, start), brute_fps(pts, m, start)) << "instance " << inst;
  }
}

TEST(Interp, WeightsFormAPartitionOfUnity) {
  const auto src = mt::random_points(50, 8);
  const auto tgt = mt::random_points(200, 9);
  const auto plan = geom::interp3nn_weights(src, tgt);
  ASSERT_EQ(plan.targets(), tgt.size());
  for (std::size_t t = 0; t < plan.targets(); ++t) {
    double s = 0.0;
    for (double w : plan.weights[t]) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const auto want = brute_knn(src, tgt[t], 3);
    EXPECT_EQ(std::vector<std::size_t>(plan.indices[t].begin(), plan.indices[t].end()), want);
  }
}

TEST(Interp, CoincidentTargetAndSymmetry) {
  const std::vector<Vec3> src{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {4, 4, 4}};
  const std::vector<Vec3> tgt{{0, 1, 0}, {0, 0, 0}};
  const auto plan = geom::interp3nn_weights(src, tgt);
  EXPECT_EQ(plan.indices[0][0], 1u);
  EXPECT_EQ(plan.weights[0][0], 1.0);
  EXPECT_EQ(plan.weights[0][1], 0.0);
  for (double w : plan.weights[1]) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  const std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(kind_of([&] { geom::interp3nn_weights(two, tgt); }), ErrorKind::kInvalidArgument);
}

TEST(Interp, ConstantFieldIsPreserved) {
  const auto src = mt::random_points(30, 21);
  const auto tgt = mt::random_points(100, 22, 2.0);
  const auto plan = geom::interp3nn_weights(src, tgt);
  for (std::size_t t = 0; t < plan.targets(); ++t) {
    double v = 0.0;
    for (int m = 0; m < 3; ++m) v += plan.weights[t][m] * 2.5;
    EXPECT_NEAR(v, 2.5, 1e-12);
  }
}

void expect_rotation(const Mat3& r, double tol) {
  EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), tol);
  EXPECT_NEAR(r.determinant(), 1.0, tol);
}

std::vector<Vec3> anisotropic_cloud(std::size_t n, std::uint64_t seed) {
  auto pts = mt::random_points(n, seed);
  const Mat3 r = mt::random_rotation(seed + 1);
  for (auto& p : pts) p = r * Vec3(3.0 * p.x(), 1.5 * p.y(), 0.4 * p.z()) + Vec3(0.2, -0.1, 0.3);
  return pts;
}

TEST(PcaAlign, AxisAlignedLineGivesSignedIdentity) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(i - 4.5, 0.0, 0.0);
  for (double s : {-1.0, 1.0}) {
    pts.emplace_back(0.0, s * 1e-3, 0.0);
    pts.emplace_back(0.0, 0.0, s * 1e-4);
  }
  const auto a = geom::pca_align(pts);
  EXPECT_LT((a.rotation.cwiseAbs() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PcaAlign, OrthonormalAndIdempotent) {
  for (int inst = 0; inst < 20; ++inst) {
    const auto pts = anisotropic_cloud(80, 100 + inst);
    const auto a = geom::pca_align(pts);
    expect_rotation(a.rotation, 1e-12);
    // Rows of the rotation are ordered by descending variance.
    const Mat3 c = geom::covariance(a.coords);
    EXPECT_GE(c(0, 0), c(1, 1));
    EXPECT_GE(c(1, 1), c(2, 2));
    EXPECT_LT((c - Mat3(c.diagonal().asDiagonal())).cwiseAbs().maxCoeff(), 1e-9);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LT((a.coords[i] - a.rotation * pts[i]).norm(), 1e-12);
    const auto b = geom::pca_align(a.coords);
    EXPECT_LT((b.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(PcaAlign, RotatedInputGivesSameCoordinatesUpToAxisSigns) {
  for (int inst = 0; inst < 20; ++inst) {
    const auto pts = anisotropic_cloud(60, 200 + inst);
    const Mat3 r = mt::random_rotation(300 + inst);
    std::vector<Vec3> rotated;
    for (const auto& p : pts) rotated.push_back(r * p);
    const auto a = geom::pca_align(pts);
    const auto b = geom::pca_align(rotated);
    for (int axis = 0; axis < 3; ++axis) {
      const double sign = a.coords[0][axis] * b.coords[0][axis] >= 0 ? 1.0 : -1.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_NEAR(b.coords[i][axis], sign * a.coords[i][axis], 1e-9);
      }
    }
  }
}

TEST(PcaAlign, DegenerateInputReturnsIdentity) {
  const std::vector<Vec3> same(5, Vec3(1, 2, 3));
  const auto a = geom::pca_align(same);
  EXPECT_TRUE(a.degenerate);
  EXPECT_EQ(a.rotation, Mat3::Identity());
}

TEST(PcaNormal, Planes) {
  auto pts = mt::random_points(50, 31);
  for (auto& p : pts) p.z() = 0.0;
  EXPECT_LT((geom::pca_normal(pts) - Vec3(0, 0, 1)).norm(), 1e-12);
  const Vec3 n = Vec3(1, 1, 1).normalized();
  auto tilted = mt::random_points(50, 32);
  for (auto& p : tilted) p -= n * n.dot(p);
  EXPECT_LT((geom::pca_normal(tilted) - n).norm(), 1e-12);
}

TEST(PcaNormal, NoisyPlaneAgreesWithLeastSquaresFit) {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(-1.0, 1.0), dz(-0.01, 0.01);
  std::vector<Vec3> pts;
  while (pts.size() < 100) {
    const double x = u(rng), y = u(rng);
    if (x * x + y * y <= 1.0) pts.emplace_back(x, y, dz(rng));
  }
  // z = a x + b y + c by the normal equations.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Vec3 atb = Vec3::Zero();
  for (const auto& p : pts) {
    const Vec3 row(p.x(), p.y(), 1.0);
    ata += row * row.transpose();
    atb += row * p.z();
  }
  const Vec3 coef = ata.ldlt().solve(atb);
  const Vec3 ls = Vec3(-coef[0], -coef[1], 1.0).normalized();
  const Vec3 n = geom::pca_normal(pts);
  const double deg = 180.0 / std::acos(-1.0);
  EXPECT_LT(std::acos(std::min(1.0, std::abs(n.z()))) * deg, 2.0);
  EXPECT_LT(std::acos(std::min(1.0, std::abs(ls.z()))) * deg, 2.0);
  EXPECT_LT(std::acos(std::min(1.0, std::abs(n.dot(ls)))) * deg, 0.5);
}

TEST(PcaNormal, InvariantToOrderAndScale) {
  const auto pts = anisotropic_cloud(40, 41);
  const Vec3 n = geom::pca_normal(pts);
  auto shuffled = pts;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(42));
  EXPECT_LT((geom::pca_normal(shuffled) - n).norm(), 1e-12);
  auto scaled = pts;
  for (auto& p : scaled) p *= 7.25;
  EXPECT_LT((geom::pca_normal(scaled) - n).norm(), 1e-12);
}

TEST(PcaNormal, CollinearIsDegenerate) {
  std::vector<Vec3> line;
  for (int i = 0; i < 6; ++i) line.emplace_back(i, 2.0 * i, -i);
  EXPECT_EQ(kind_of([&] { geom::pca_normal(line); }), ErrorKind::kDegenerate);
  EXPECT_EQ(kind_of([&] { geom::pca_normal(std::vector<Vec3>(2, Vec3::Zero())); }), ErrorKind::kInvalidArgument);
}

TEST(CanonicalSign, LargestComponentPositiveAndTies) {
  EXPECT_EQ(geom::canonical_sign(Vec3(0.1, -0.9, 0.2)), Vec3(-0.1, 0.9, -0.2));
  EXPECT_EQ(geom::canonical_sign(Vec3(-0.5, 0.5, 0.0)), Vec3(0.5, -0.5, 0.0));
  EXPECT_EQ(geom::canonical_sign(Vec3(0.0, -0.5, 0.5)), Vec3(0.0, 0.5, -0.5));
}

TEST(ExtractPatch, FrameInvariants) {
  geom::PointCloud cloud;
  cloud.coords = anisotropic_cloud(500, 51);
  const geom::KdTree tree(cloud.coords);
  for (std::size_t center : {0u, 17u, 250u, 499u}) {
    const auto p = geom::extract_patch(tree, cloud.coords, center, 64);
    ASSERT_EQ(p.size(), 64u);
    EXPECT_EQ(p.parent_indices[p.center_index], center);
    EXPECT_LT(p.local_coords[p.center_index].norm(), 1e-15);
    double max_norm = 0.0;
    for (const auto& v : p.local_coords) max_norm = std::max(max_norm, v.norm());
    EXPECT_NEAR(max_norm, 1.0, 1e-6);
    expect_rotation(p.rotation, 1e-6);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const Vec3 src = cloud.coords[p.parent_indices[j]];
      const Vec3 want = p.rotation * (src - p.translation) / p.scale;
      EXPECT_LE((p.local_coords[j] - want).norm(), 1e-6 * std::max(1.0, want.norm()));
      const Vec3 back = p.rotation.transpose() * p.local_coords[j] * p.scale + p.translation;
      EXPECT_LE((back - src).norm(), 1e-6 * std::max(1.0, src.norm()));
    }
    EXPECT_EQ(std::vector<std::size_t>(p.parent_indices.begin(), p.parent_indices.end()),
              brute_knn(cloud.coords, cloud.coords[center], 64));
  }
}

TEST(ExtractPatch, WholeCloudAndErrors) {
  geom::PointCloud cloud;
  cloud.coords = mt::random_points(40, 52);
  auto p = geom::extract_patch(cloud, 5, 40);
  std::sort(p.parent_indices.begin(), p.parent_indices.end());
  std::vector<std::size_t> iota(40);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  EXPECT_EQ(p.parent_indices, iota);
  EXPECT_EQ(kind_of([&] { geom::extract_patch(cloud, 5, 41); }), ErrorKind::kInvalidArgument);
}

TEST(ExtractPatch, PreRotationIsFoldedIntoTheFrame) {
  geom::PointCloud cloud;
  cloud.coords = anisotropic_cloud(300, 53);
  const geom::KdTree tree(cloud.coords);
  const Mat3 pre = mt::random_rotation(54);
  const auto p = geom::extract_patch(tree, cloud.coords, 10, 50, &pre);
  expect_rotation(p.rotation, 1e-9);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const Vec3 want = p.rotation * (cloud.coords[p.parent_indices[j]] - p.translation) / p.scale;
    EXPECT_LT((p.local_coords[j] - want).norm(), 1e-9);
  }
}

TEST(PointCloud, Validation) {
  geom::PointCloud c;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kInvalidArgument);
  c.coords = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  c.normals = std::vector<Vec3>{Vec3(0, 0, 1)};
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConsistency);
  c.normals = std::vector<Vec3>{Vec3(0, 0, 1), Vec3(0, 0, 1.1)};
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kInvalidArgument);
  c.normals = std::vector<Vec3>{Vec3(0, 0, 1), Vec3(0, 1, 0)};
  EXPECT_NO_THROW(c.validate());
}

}  // namespace
