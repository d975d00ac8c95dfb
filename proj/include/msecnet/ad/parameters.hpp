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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "msecnet/ad/tensor.hpp"
#include "msecnet/error.hpp"

namespace msecnet::ad {

enum class ParamKind { kWeight, kBias, kNormScale, kNormShift };

struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor value;
};

/// Batch-norm running statistics (not learnable).
struct RunningStats {
  std::string name;
  Tensor mean;
  Tensor var;
  std::uint64_t updates = 0;
};

/// All model state. Learnable scalars have a flat ordering given by
/// registration order, then row-major within each tensor.
class ParameterStore {
 public:
  std::size_t add(std::string name, ParamKind kind, Tensor init) {
    MSECNET_REQUIRE(!index_.contains(name), ErrorKind::kInvalidArgument, "duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back({std::move(name), kind, std::move(init)});
    return params_.size() - 1;
  }

  std::size_t add_stats(std::string name, std::size_t channels) {
    stats_.push_back({std::move(name), Tensor({channels}, 0.0), Tensor({channels}, 1.0), 0});
    return stats_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& param(std::size_t id) { return params_.at(id); }
  const Parameter& param(std::size_t id) const { return params_.at(id); }
  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }

  RunningStats& stats(std::size_t id) { return stats_.at(id); }
  const RunningStats& stats(std::size_t id) const { return stats_.at(id); }
  const std::vector<RunningStats>& all_stats() const { return stats_; }

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    MSECNET_REQUIRE(it != index_.end(), ErrorKind::kInvalidArgument, "unknown parameter " + name);
    return it->second;
  }

  std::size_t learnable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Offset of each parameter tensor in the flat ordering.
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> out(params_.size());
    std::size_t at = 0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out[i] = at;
      at += params_[i].value.size();
    }
    return out;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(learnable_count());
    for (const auto& p : params_) flat.insert(flat.end(), p.value.storage().begin(), p.value.storage().end());
    return flat;
  }

  void unflatten(std::span<const double> flat) {
    MSECNET_REQUIRE(flat.size() == learnable_count(), ErrorKind::kShape, "flat parameter size mismatch");
    std::size_t at = 0;
    for (auto& p : params_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), p.value.size(), p.value.data());
      at += p.value.size();
    }
  }

  /// Weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases and shifts 0; scales 1.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& p : params_) {
      switch (p.kind) {
        case ParamKind::kWeight: {
          const double fan_in = static_cast<double>(p.value.cols());
          const double bound = std::sqrt(6.0 / fan_in);
          std::uniform_real_distribution<double> u(-bound, bound);
          for (double& v : p.value.values()) v = u(rng);
          break;
        }
        case ParamKind::kBias:
        case ParamKind::kNormShift: p.value.fill(0.0); break;
        case ParamKind::kNormScale: p.value.fill(1.0); break;
      }
    }
    for (auto& s : stats_) {
      s.mean.fill(0.0);
      s.var.fill(1.0);
      s.updates = 0;
    }
  }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::vector<Parameter> params_;
  std::vector<RunningStats> stats_;
  std::map<std::string, std::size_t> index_;
};

namespace checkpoint {

inline constexpr char kMagic[8] = {'M', 'S', 'E', 'C', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

/// Little-endian primitive writer/reader independent of host byte order.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double v) { bytes(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const std::string& s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  void tensor(const std::string& name, const Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os_.write(buf, n);
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  std::string raw(std::size_t n) {
    MSECNET_REQUIRE(n < (1u << 20), ErrorKind::kParse, path_ + ": implausible name length");
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }

  std::pair<std::string, Tensor> tensor() {
    std::string name = raw(u32());
    const std::uint32_t rank = u32();
    MSECNET_REQUIRE(rank <= 8, ErrorKind::kParse, path_ + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    Tensor t(shape);
    for (double& v : t.values()) v = f64();
    return {std::move(name), std::move(t)};
  }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8] = {};
    is_.read(reinterpret_cast<char*>(buf), n);
    check();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  void check() { MSECNET_REQUIRE(static_cast<bool>(is_), ErrorKind::kParse, path_ + ": truncated checkpoint"); }
  std::istream& is_;
  std::string path_;
};

}  // namespace checkpoint

// Layout: magic, version (u32), parameter count (u64), parameter tensors;
// then statistics count (u64) and statistics tensors in the same layout
// (<name>.running_mean, <name>.running_var, <name>.updates).
inline void ParameterStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSECNET_REQUIRE(static_cast<bool>(os), ErrorKind::kIo, "cannot open " + path + " for writing");
  checkpoint::Writer w(os);
  os.write(checkpoint::kMagic, 8);
  w.u32(checkpoint::kVersion);
  w.u64(params_.size());
  for (const auto& p : params_) w.tensor(p.name, p.value);
  w.u64(stats_.size() * 3);
  for (const auto& s : stats_) {
    w.tensor(s.name + ".running_mean", s.mean);
    w.tensor(s.name + ".running_var", s.var);
    w.tensor(s.name + ".updates", Tensor::scalar(static_cast<double>(s.updates)));
  }
  MSECNET_REQUIRE(static_cast<bool>(os), ErrorKind::kIo, "write failed for " + path);
}

inline void ParameterStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MSECNET_REQUIRE(static_cast<bool>(is), ErrorKind::kIo, "cannot open checkpoint " + path);
  checkpoint::Reader r(is, path);
  char magic[8];
  is.read(magic, 8);
  MSECNET_REQUIRE(is && std::memcmp(magic, checkpoint::kMagic, 8) == 0, ErrorKind::kParse,
          path + ": not a checkpoint file");
  const std::uint32_t version = r.u32();
  MSECNET_REQUIRE(version == checkpoint::kVersion, ErrorKind::kParse,
          path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t count = r.u64();
  MSECNET_REQUIRE(count == params_.size(), ErrorKind::kConsistency,
          path + ": checkpoint has " + std::to_string(count) + " parameters, model expects " +
              std::to_string(params_.size()));
  for (auto& p : params_) {
    auto [name, t] = r.tensor();
    MSECNET_REQUIRE(name == p.name && t.shape() == p.value.shape(), ErrorKind::kConsistency,
            path + ": parameter " + name + " " + shape_string(t.shape()) +
                " does not match model parameter " + p.name + " " +
                shape_string(p.value.shape()));
    p.value = std::move(t);
  }
  const std::uint64_t stat_count = r.u64();
  MSECNET_REQUIRE(stat_count == stats_.size() * 3, ErrorKind::kConsistency,
          path + ": running statistics do not match the model");
  for (auto& s : stats_) {
    auto [mean_name, mean] = r.tensor();
    auto [var_name, var] = r.tensor();
    auto [upd_name, upd] = r.tensor();
    MSECNET_REQUIRE(mean_name == s.name + ".running_mean" && var_name == s.name + ".running_var" &&
                upd_name == s.name + ".updates" && mean.shape() == s.mean.shape() &&
                var.shape() == s.var.shape() && upd.size() == 1,
            ErrorKind::kConsistency, path + ": statistics entry mismatch at " + s.name);
    s.mean = std::move(mean);
    s.var = std::move(var);
    s.updates = static_cast<std::uint64_t>(upd[0]);
  }
}

}  // namespace msecnet::ad
