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

#include <cstdint>
#include <functional>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msecnet/ad/parameters.hpp"
#include "msecnet/ad/tensor.hpp"
#include "msecnet/error.hpp"

namespace msecnet::ad {

enum class NormMode { kTrain, kEval };

/// Records the outcome of every non-smooth decision (ReLU masks, max-pool
/// winners, loss branch switches) on one pass and replays them on later
/// passes, so finite differences stay on a single linear piece.
class BranchLog {
 public:
  enum class Mode { kOff, kRecord, kReplay };

  Mode mode() const { return mode_; }
  void start_recording() {
    mode_ = Mode::kRecord;
    decisions_.clear();
    cursor_ = 0;
  }
  void start_replay() {
    mode_ = Mode::kReplay;
    cursor_ = 0;
  }
  void stop() { mode_ = Mode::kOff; }
  std::size_t size() const { return decisions_.size(); }

  /// Returns the decision to use: `live` when recording/off, the stored one when replaying.
  std::uint32_t decide(std::uint32_t live) {
    switch (mode_) {
      case Mode::kOff: return live;
      case Mode::kRecord: decisions_.push_back(live); return live;
      case Mode::kReplay:
        MSECNET_REQUIRE(cursor_ < decisions_.size(), ErrorKind::kDeterminism,
                "replayed pass makes more branch decisions than the recorded one");
        return decisions_[cursor_++];
    }
    return live;
  }

 private:
  Mode mode_ = Mode::kOff;
  std::vector<std::uint32_t> decisions_;
  std::size_t cursor_ = 0;
};

class Tape;

struct TapeOptions {
  NormMode norm_mode = NormMode::kTrain;
  bool update_running_stats = true;
  // Train mode: replace running statistics with this batch's statistics.
  bool calibrate_running_stats = false;
  BranchLog* branches = nullptr;
  // Drop intermediate values and gradients as the sweep passes them.
  bool release_intermediates = false;
};

/// Handle to a recorded value.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Forward recording and a single reverse sweep. Nodes are appended in
/// execution order, which is a topological order; the sweep walks it
/// backwards. Structural inputs captured by ops (graphs, interpolation
/// plans) must outlive the tape.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  using Options = TapeOptions;

  explicit Tape(ParameterStore* store = nullptr, Options options = Options())
      : store_(store), options_(options) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Options& options() const { return options_; }
  ParameterStore* store() const { return store_; }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  Var input(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {});
  }

  /// Leaf bound to a stored parameter; repeated calls return the same node.
  Var param(std::size_t pid) {
    MSECNET_REQUIRE(store_ != nullptr, ErrorKind::kLifecycle, "tape has no parameter store");
    auto it = param_nodes_.find(pid);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(store_->param(pid).value, true, {});
    nodes_[v.id].param_id = pid;
    param_nodes_[pid] = v.id;
    return v;
  }

  Var record(Tensor value, bool requires_grad, Backward backward) {
    MSECNET_REQUIRE(!swept_, ErrorKind::kLifecycle, "cannot record on a tape that was already swept");
    MSECNET_REQUIRE(value.all_finite(), ErrorKind::kNumeric, "non-finite value produced in forward pass");
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : Backward{});
  }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of node `id` (zero-initialized on first access), or
  /// nullptr if the node does not take gradients.
  Tensor* grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return &n.grad;
  }
  const Tensor& grad(Var v) const {
    MSECNET_REQUIRE(swept_, ErrorKind::kLifecycle, "gradients requested before the reverse sweep");
    return node(v).grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Reverse sweep from a scalar seed. A tape can be swept once.
  void backward(Var seed) {
    MSECNET_REQUIRE(!swept_, ErrorKind::kLifecycle, "reverse sweep on a stale graph; re-record the forward pass");
    MSECNET_REQUIRE(seed.valid() && seed.id < nodes_.size(), ErrorKind::kLifecycle,
            "seed does not belong to this tape");
    MSECNET_REQUIRE(nodes_[seed.id].value.size() == 1, ErrorKind::kShape, "seed must be a scalar");
    swept_ = true;
    if (!nodes_[seed.id].requires_grad) return;
    Tensor* g = grad_of(seed.id);
    (*g)[0] = 1.0;
    for (std::size_t id = seed.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
      if (options_.release_intermediates) {
        n.grad = Tensor{};
        n.value = Tensor{};
      }
    }
  }

  bool swept() const { return swept_; }

  /// Parameter gradients in the store's flat ordering; unused parameters get 0.
  std::vector<double> parameter_gradients() const {
    MSECNET_REQUIRE(store_ != nullptr, ErrorKind::kLifecycle, "tape has no parameter store");
    MSECNET_REQUIRE(swept_, ErrorKind::kLifecycle, "gradients requested before the reverse sweep");
    std::vector<double> flat(store_->learnable_count(), 0.0);
    const auto offsets = store_->offsets();
    for (const auto& [pid, nid] : param_nodes_) {
      const Tensor& g = nodes_[nid].grad;
      if (g.empty()) continue;
      std::copy(g.values().begin(), g.values().end(), flat.begin() + static_cast<std::ptrdiff_t>(offsets[pid]));
    }
    return flat;
  }

  std::uint32_t decide(std::uint32_t live) {
    return options_.branches ? options_.branches->decide(live) : live;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    std::size_t param_id = std::numeric_limits<std::size_t>::max();
  };

  const Node& node(Var v) const {
    MSECNET_REQUIRE(v.valid() && v.id < nodes_.size(), ErrorKind::kLifecycle, "variable not on this tape");
    return nodes_[v.id];
  }

  Var push(Tensor value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  ParameterStore* store_;
  Options options_;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool swept_ = false;
};

}  // namespace msecnet::ad
