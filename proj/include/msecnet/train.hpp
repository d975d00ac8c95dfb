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
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msecnet/ad/tape.hpp"
#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"
#include "msecnet/losses.hpp"
#include "msecnet/network.hpp"
#include "msecnet/optim.hpp"
#include "msecnet/structure.hpp"

namespace msecnet::train {

using geom::Mat3;
using geom::PointCloud;
using model::Network;
using model::PatchGeometry;

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_patches = 128;
  std::size_t patches_per_shape_per_epoch = 1000;
  std::size_t n = 700;  // points per patch
  double lr_max = 2e-3;
  double lr_min = 2e-5;
  AdamWConfig adam;
  std::uint64_t seed = 0;
  bool augment_rotation = true;

  void validate() const {
    MSECNET_REQUIRE(epochs > 0 && batch_patches > 0 && patches_per_shape_per_epoch > 0 && n > 0,
            ErrorKind::kInvalidArgument, "training counts must be positive");
    MSECNET_REQUIRE(lr_min >= 0.0 && lr_min <= lr_max, ErrorKind::kInvalidArgument, "need 0 <= lr_min <= lr_max");
    MSECNET_REQUIRE(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0,
            ErrorKind::kInvalidArgument, "invalid Adam moments");
    MSECNET_REQUIRE(adam.weight_decay >= 0.0, ErrorKind::kInvalidArgument, "weight decay must be non-negative");
  }
};

/// Single-core scale: 128-point patches, 1500 patches per shape, 40 epochs.
inline TrainConfig desk_train_config() {
  TrainConfig c;
  c.epochs = 40;
  c.batch_patches = 16;
  c.patches_per_shape_per_epoch = 1500;
  c.n = 128;
  return c;
}

struct PatchItem {
  std::size_t shape = 0;
  std::size_t center = 0;
  Mat3 rotation = Mat3::Identity();
};

struct Batch {
  std::vector<PatchItem> items;
  PatchGeometry geometry;
  ad::Tensor gt;  // (batch * n) x 3, patch frame
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate of the epoch's first step
  LossReport loss;        // mean over the epoch's patches
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t steps = 0;
};

struct TrainOutputs {
  std::optional<std::string> log_path;
  std::optional<std::string> last_checkpoint;
  std::optional<std::string> best_checkpoint;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Uniform random rotation from a normalized Gaussian quaternion.
inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    q = Eigen::Vector4d(g(rng), g(rng), g(rng), g(rng));
  } while (q.norm() < 1e-12);
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

inline std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu\t%.17g\t%.17g\t%.17g\t%.17g", r.epoch, r.lr, r.loss.l_reg, r.loss.l_sin,
                r.loss.l_total);
  return buf;
}

/// A training shape with its search tree.
class TrainShape {
 public:
  explicit TrainShape(const PointCloud& cloud) : cloud_(&cloud), tree_(cloud.coords) {}
  const PointCloud& cloud() const { return *cloud_; }
  const geom::KdTree& tree() const { return tree_; }

 private:
  const PointCloud* cloud_;
  geom::KdTree tree_;
};

/// Patches plus co-rotated ground truth in each patch frame.
inline Batch make_batch(std::span<const TrainShape> shapes, std::vector<PatchItem> items, std::size_t n,
                        const model::ModelConfig& cfg) {
  Batch b;
  std::vector<std::vector<geom::Vec3>> coords;
  coords.reserve(items.size());
  b.gt = ad::Tensor({items.size() * n, 3});
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const PointCloud& cloud = shapes[it.shape].cloud();
    const geom::Patch p = geom::extract_patch(shapes[it.shape].tree(), cloud.coords, it.center, n, &it.rotation);
    for (std::size_t j = 0; j < n; ++j) {
      const geom::Vec3 v = p.to_local_direction((*cloud.normals)[p.parent_indices[j]]);
      for (int c = 0; c < 3; ++c) b.gt[(i * n + j) * 3 + static_cast<std::size_t>(c)] = v[c];
    }
    coords.push_back(p.local_coords);
  }
  b.geometry = model::build_geometry(coords, cfg);
  b.items = std::move(items);
  return b;
}

/// One forward, loss, reverse sweep and optimizer update.
inline LossReport train_step(Network& net, AdamW& opt, const Batch& batch, double lr) {
  ad::TapeOptions o;
  o.norm_mode = ad::NormMode::kTrain;
  o.update_running_stats = true;
  o.release_intermediates = true;
  ad::Tape t(&net.params(), o);
  const auto out = net.forward(t, batch.geometry);
  const LossVars lv = total_loss(t, out.normals, batch.gt);
  const LossReport r = report(t, lv);
  MSECNET_REQUIRE(std::isfinite(r.l_total), ErrorKind::kNumeric, "non-finite loss");
  t.backward(lv.total);
  const std::vector<double> grads = t.parameter_gradients();
  for (double g : grads) MSECNET_REQUIRE(std::isfinite(g), ErrorKind::kNumeric, "non-finite gradient");
  opt.step(net.params(), grads, lr);
  return r;
}

/// Every epoch draws patches_per_shape_per_epoch seeded centers per shape,
/// shuffles them, and steps once per batch with a cosine schedule over all steps.
inline TrainResult train(Network& net, std::span<const PointCloud> clouds, const TrainConfig& cfg,
                         const TrainOutputs& outputs = {}) {
  cfg.validate();
  MSECNET_REQUIRE(!clouds.empty(), ErrorKind::kInvalidArgument, "no training shapes");
  std::vector<TrainShape> shapes;
  shapes.reserve(clouds.size());
  for (std::size_t s = 0; s < clouds.size(); ++s) {
    clouds[s].validate();
    MSECNET_REQUIRE(clouds[s].normals.has_value(), ErrorKind::kInvalidArgument,
            "training shape " + std::to_string(s) + " has no ground-truth normals");
    MSECNET_REQUIRE(clouds[s].size() >= cfg.n, ErrorKind::kInvalidArgument,
            "training shape " + std::to_string(s) + " has fewer points than the patch size");
    shapes.emplace_back(clouds[s]);
  }
  const std::size_t per_epoch = cfg.patches_per_shape_per_epoch * shapes.size();
  const std::size_t batches = (per_epoch + cfg.batch_patches - 1) / cfg.batch_patches;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.epochs) * batches;
  AdamW opt = AdamW::for_store(net.params(), cfg.adam);

  std::optional<std::ofstream> log;
  if (outputs.log_path) {
    log.emplace(*outputs.log_path, std::ios::trunc);
    MSECNET_REQUIRE(static_cast<bool>(*log), ErrorKind::kIo, "cannot write " + *outputs.log_path);
  }

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::vector<PatchItem> items;
    items.reserve(per_epoch);
    for (std::size_t s = 0; s < shapes.size(); ++s) {
      std::uniform_int_distribution<std::size_t> pick(0, shapes[s].cloud().size() - 1);
      for (std::size_t i = 0; i < cfg.patches_per_shape_per_epoch; ++i) {
        PatchItem it;
        it.shape = s;
        it.center = pick(rng);
        if (cfg.augment_rotation) it.rotation = random_rotation(rng);
        items.push_back(it);
      }
    }
    for (std::size_t i = items.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(items[i - 1], items[pick(rng)]);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(result.steps, total_steps, cfg.lr_max, cfg.lr_min);
    double weight = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_patches;
      const std::size_t hi = std::min(lo + cfg.batch_patches, items.size());
      std::vector<PatchItem> chunk(items.begin() + static_cast<std::ptrdiff_t>(lo),
                                   items.begin() + static_cast<std::ptrdiff_t>(hi));
      const double lr = cosine_lr(result.steps, total_steps, cfg.lr_max, cfg.lr_min);
      LossReport r;
      try {
        const Batch batch = make_batch(shapes, std::move(chunk), cfg.n, net.config());
        r = train_step(net, opt, batch, lr);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumeric) throw;
        std::string who;
        for (std::size_t i = lo; i < hi; ++i)
          who += " (shape " + std::to_string(items[i].shape) + ", center " + std::to_string(items[i].center) + ")";
        fail(ErrorKind::kNumeric, "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) + ": " +
                                      e.what() + "; patches:" + who);
      }
      ++result.steps;
      const double w = static_cast<double>(hi - lo);
      rec.loss.l_reg += w * r.l_reg;
      rec.loss.l_sin += w * r.l_sin;
      weight += w;
    }
    rec.loss.l_reg /= weight;
    rec.loss.l_sin /= weight;
    rec.loss.l_total = rec.loss.l_reg + rec.loss.l_sin;
    result.log.push_back(rec);
    if (log) {
      *log << format_epoch(rec) << "\n";
      log->flush();
    }
    if (rec.loss.l_total < result.best_loss) {
      result.best_loss = rec.loss.l_total;
      result.best_epoch = rec.epoch;
      if (outputs.best_checkpoint) net.params().save(*outputs.best_checkpoint);
    }
    if (outputs.on_epoch) outputs.on_epoch(rec);
  }
  if (outputs.last_checkpoint) net.params().save(*outputs.last_checkpoint);
  return result;
}

/// Repeated steps on one fixed patch at a constant rate; returns every step's loss.
inline std::vector<LossReport> overfit_patch(Network& net, const PointCloud& cloud, std::size_t center,
                                             std::size_t n, std::size_t steps, double lr,
                                             const AdamWConfig& adam = {}) {
  cloud.validate();
  MSECNET_REQUIRE(cloud.normals.has_value(), ErrorKind::kInvalidArgument, "overfit shape has no normals");
  const std::vector<TrainShape> shapes{TrainShape(cloud)};
  const Batch batch = make_batch(shapes, {PatchItem{0, center, Mat3::Identity()}}, n, net.config());
  AdamW opt = AdamW::for_store(net.params(), adam);
  std::vector<LossReport> out;
  out.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) out.push_back(train_step(net, opt, batch, lr));
  return out;
}

}  // namespace msecnet::train
