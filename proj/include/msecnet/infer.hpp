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
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "msecnet/ad/tape.hpp"
#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"
#include "msecnet/network.hpp"
#include "msecnet/structure.hpp"

namespace msecnet::infer {

using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;

inline constexpr double kDefaultInteriorFraction = 0.8;

struct CoveredPatch {
  std::size_t center = 0;
  std::vector<std::size_t> members;    // the N nearest points, nearest first
  std::vector<std::uint8_t> interior;  // per member
};

struct CoveragePlan {
  std::vector<CoveredPatch> patches;

  std::vector<std::size_t> centers() const {
    std::vector<std::size_t> c;
    for (const auto& p : patches) c.push_back(p.center);
    return c;
  }
};

/// Greedy cover. The minimum-potential point (lowest index on ties) becomes
/// the next center; its interior points (within interior_fraction of the
/// patch radius) gain a Gaussian potential. A patch that holds the whole
/// cloud has no boundary, so all of its points are interior.
inline CoveragePlan potential_patch_cover(const geom::KdTree& tree, std::span<const Vec3> coords, std::size_t n,
                                          double interior_fraction = kDefaultInteriorFraction) {
  MSECNET_REQUIRE(!coords.empty(), ErrorKind::kInvalidArgument, "cover of an empty cloud");
  MSECNET_REQUIRE(n >= 1 && n <= coords.size(), ErrorKind::kInvalidArgument,
          "patch size " + std::to_string(n) + " outside [1, " + std::to_string(coords.size()) + "]");
  MSECNET_REQUIRE(interior_fraction > 0.0 && interior_fraction <= 1.0, ErrorKind::kInvalidArgument,
          "interior fraction must be in (0, 1]");
  const bool whole = n == coords.size();
  std::vector<double> potential(coords.size(), 0.0);
  std::vector<std::uint8_t> covered(coords.size(), 0);
  std::size_t remaining = coords.size();
  CoveragePlan plan;
  std::vector<double> d2(n);
  while (remaining > 0) {
    const std::size_t center = static_cast<std::size_t>(
        std::min_element(potential.begin(), potential.end()) - potential.begin());
    CoveredPatch p;
    p.center = center;
    p.members.resize(n);
    tree.query(coords[center], n, p.members.data(), d2.data());
    const double r = std::sqrt(d2.back());
    const double inner = r * interior_fraction;
    p.interior.assign(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::sqrt(d2[j]);
      if (!(whole || d <= inner)) continue;
      p.interior[j] = 1;
      const std::size_t i = p.members[j];
      const double sig = inner > 0.0 ? inner : 1.0;
      potential[i] += std::exp(-d2[j] / (2.0 * sig * sig));
      if (!covered[i]) {
        covered[i] = 1;
        --remaining;
      }
    }
    plan.patches.push_back(std::move(p));
  }
  return plan;
}

inline CoveragePlan potential_patch_cover(const PointCloud& cloud, std::size_t n,
                                          double interior_fraction = kDefaultInteriorFraction) {
  const geom::KdTree tree(cloud.coords);
  return potential_patch_cover(tree, cloud.coords, n, interior_fraction);
}

/// Per-point sums of n n^T; sign-agnostic and order-independent.
class PredictionAccumulator {
 public:
  explicit PredictionAccumulator(std::size_t points = 0) : sums_(points, Mat3::Zero()), counts_(points, 0) {}

  std::size_t size() const { return sums_.size(); }
  std::size_t count(std::size_t i) const { return counts_.at(i); }
  const Mat3& sum(std::size_t i) const { return sums_.at(i); }

  void add(std::size_t point, const Vec3& n) {
    MSECNET_REQUIRE(point < sums_.size(), ErrorKind::kInvalidArgument, "accumulator index out of range");
    MSECNET_REQUIRE(n.allFinite(), ErrorKind::kNumeric, "non-finite prediction for point " + std::to_string(point));
    sums_[point] += n * n.transpose();
    ++counts_[point];
  }

  void accumulate(std::span<const Vec3> normals, std::span<const std::size_t> parents) {
    MSECNET_REQUIRE(normals.size() == parents.size(), ErrorKind::kShape, "predictions and parent indices differ in count");
    for (std::size_t j = 0; j < normals.size(); ++j) add(parents[j], normals[j]);
  }

  void merge(const PredictionAccumulator& other) {
    MSECNET_REQUIRE(other.size() == size(), ErrorKind::kShape, "accumulator size mismatch");
    for (std::size_t i = 0; i < sums_.size(); ++i) {
      sums_[i] += other.sums_[i];
      counts_[i] += other.counts_[i];
    }
  }

  /// Principal eigenvector per point, largest-magnitude component positive.
  std::vector<Vec3> finalize() const {
    std::vector<Vec3> out(sums_.size());
    for (std::size_t i = 0; i < sums_.size(); ++i) {
      MSECNET_REQUIRE(counts_[i] > 0, ErrorKind::kCoverage, "point " + std::to_string(i) + " received no prediction");
      Eigen::SelfAdjointEigenSolver<Mat3> eig(sums_[i]);
      out[i] = geom::canonical_sign(eig.eigenvectors().col(2).normalized());
    }
    return out;
  }

 private:
  std::vector<Mat3> sums_;
  std::vector<std::size_t> counts_;
};

/// Unoriented angle error: sqrt(mean(acos(min(|p.g|, 1))^2)) in degrees.
inline double rmse_angle(std::span<const Vec3> pred, std::span<const Vec3> gt,
                         std::optional<std::span<const std::size_t>> subset = std::nullopt) {
  MSECNET_REQUIRE(pred.size() == gt.size(), ErrorKind::kShape,
          "rmse over " + std::to_string(pred.size()) + " predictions and " + std::to_string(gt.size()) + " targets");
  auto term = [&](std::size_t i) {
    const double c = std::clamp(std::abs(pred[i].dot(gt[i])), 0.0, 1.0);
    const double a = std::acos(c) * 180.0 / std::numbers::pi;
    return a * a;
  };
  double s = 0.0;
  std::size_t count = 0;
  if (subset) {
    for (std::size_t i : *subset) {
      MSECNET_REQUIRE(i < pred.size(), ErrorKind::kInvalidArgument, "rmse subset index " + std::to_string(i) + " out of range");
      s += term(i);
      ++count;
    }
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) s += term(i);
    count = pred.size();
  }
  MSECNET_REQUIRE(count > 0, ErrorKind::kShape, "rmse over zero points");
  return std::sqrt(s / static_cast<double>(count));
}

// ---- patch prediction ----------------------------------------------------

struct PatchPrediction {
  std::vector<Vec3> normals;  // world frame, unit
  std::vector<std::size_t> parents;
  std::vector<std::uint8_t> degenerate;  // head output vanished for this point
};

/// Eval-mode forward over a batch of patches; outputs mapped back by R^T.
inline std::vector<PatchPrediction> predict_patches(const model::Network& net, std::span<const geom::Patch> patches) {
  MSECNET_REQUIRE(!patches.empty(), ErrorKind::kInvalidArgument, "no patches to predict");
  std::vector<std::vector<Vec3>> coords;
  coords.reserve(patches.size());
  for (const auto& p : patches) coords.push_back(p.local_coords);
  const model::PatchGeometry g = model::build_geometry(coords, net.config());
  ad::TapeOptions o;
  o.norm_mode = ad::NormMode::kEval;
  o.update_running_stats = false;
  // The store is only read in eval mode.
  ad::Tape t(const_cast<ad::ParameterStore*>(&net.params()), o);
  const auto out = net.forward(t, g);
  const ad::Tensor& nv = t.value(out.normals);
  const std::size_t n = patches.front().size();
  std::vector<PatchPrediction> res(patches.size());
  for (std::size_t b = 0; b < patches.size(); ++b) {
    auto& r = res[b];
    r.parents = patches[b].parent_indices;
    r.normals.resize(n);
    r.degenerate.assign(out.degenerate.begin() + static_cast<std::ptrdiff_t>(b * n),
                        out.degenerate.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t row = (b * n + j) * 3;
      r.normals[j] = patches[b].to_world_direction(Vec3(nv[row], nv[row + 1], nv[row + 2])).normalized();
    }
  }
  return res;
}

inline PatchPrediction predict_patch(const model::Network& net, const PointCloud& cloud, std::size_t center,
                                     std::size_t n) {
  const geom::Patch p = geom::extract_patch(cloud, center, n);
  return std::move(predict_patches(net, std::span<const geom::Patch>(&p, 1)).front());
}

/// Worker count from an explicit request, else MSEC_THREADS, else 1.
inline std::size_t resolve_threads(std::optional<std::size_t> requested = std::nullopt) {
  if (requested && *requested > 0) return *requested;
  if (const char* env = std::getenv("MSEC_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

// ---- estimators ----------------------------------------------------------

class NormalEstimator {
 public:
  virtual ~NormalEstimator() = default;
  virtual std::string name() const = 0;
  /// Unit normals in the cloud's point order.
  virtual std::vector<Vec3> estimate(const PointCloud& cloud) const = 0;
};

/// Classical baseline: smallest principal direction of the k nearest points.
class PcaEstimator final : public NormalEstimator {
 public:
  explicit PcaEstimator(std::size_t k) : k_(k) {
    MSECNET_REQUIRE(k >= 3, ErrorKind::kInvalidArgument, "PCA baseline needs k >= 3");
  }
  std::string name() const override { return "pca"; }
  std::vector<Vec3> estimate(const PointCloud& cloud) const override {
    MSECNET_REQUIRE(k_ <= cloud.size(), ErrorKind::kInvalidArgument, "PCA baseline k exceeds the cloud size");
    const geom::NeighborGraph g = geom::knn(cloud.coords, cloud.coords, k_);
    std::vector<Vec3> out(cloud.size());
    std::vector<Vec3> neigh(k_);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto row = g.row(i);
      for (std::size_t m = 0; m < k_; ++m) neigh[m] = cloud.coords[row[m]];
      out[i] = geom::pca_normal(neigh);
    }
    return out;
  }

 private:
  std::size_t k_;
};

/// Returns the ground truth; checks the evaluation plumbing.
class OracleEstimator final : public NormalEstimator {
 public:
  std::string name() const override { return "oracle"; }
  std::vector<Vec3> estimate(const PointCloud& cloud) const override {
    MSECNET_REQUIRE(cloud.normals.has_value(), ErrorKind::kInvalidArgument, "oracle estimator needs ground truth");
    return *cloud.normals;
  }
};

struct InferenceOptions {
  std::size_t n = 700;
  double interior_fraction = kDefaultInteriorFraction;
  std::size_t batch = 16;
  std::size_t threads = 1;
};

/// Cover, predict, accumulate, finalize. Patches are split into contiguous
/// per-worker ranges; predictions are accumulated in patch order afterwards,
/// so the result does not depend on the worker count.
class MsecEstimator final : public NormalEstimator {
 public:
  MsecEstimator(const model::Network& net, InferenceOptions opts) : net_(&net), opts_(opts) {
    MSECNET_REQUIRE(opts_.batch > 0 && opts_.threads > 0, ErrorKind::kInvalidArgument, "batch and threads must be positive");
  }
  std::string name() const override { return "msecnet"; }

  std::vector<Vec3> estimate(const PointCloud& cloud) const override {
    const geom::KdTree tree(cloud.coords);
    const std::size_t n = std::min(opts_.n, cloud.size());
    const CoveragePlan plan = potential_patch_cover(tree, cloud.coords, n, opts_.interior_fraction);
    const std::size_t workers = std::min(opts_.threads, plan.patches.size());
    std::vector<PatchPrediction> preds(plan.patches.size());
    std::vector<std::exception_ptr> errors(workers);
    auto run = [&](std::size_t w) {
      try {
        const std::size_t lo = plan.patches.size() * w / workers;
        const std::size_t hi = plan.patches.size() * (w + 1) / workers;
        for (std::size_t b = lo; b < hi; b += opts_.batch) {
          std::vector<geom::Patch> patches;
          for (std::size_t i = b; i < std::min(hi, b + opts_.batch); ++i)
            patches.push_back(geom::extract_patch(tree, cloud.coords, plan.patches[i].center, n));
          auto out = predict_patches(*net_, patches);
          for (std::size_t j = 0; j < out.size(); ++j) preds[b + j] = std::move(out[j]);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    PredictionAccumulator acc(cloud.size());
    for (const auto& p : preds) acc.accumulate(p.normals, p.parents);
    return acc.finalize();
  }

 private:
  const model::Network* net_;
  InferenceOptions opts_;
};

}  // namespace msecnet::infer
