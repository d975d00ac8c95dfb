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
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "msecnet/msecnet.hpp"

namespace msecnet::testing {

using geom::Mat3;
using geom::Vec3;

inline std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

/// Points on a coarse integer lattice: many exact distance ties.
inline std::vector<Vec3> lattice_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(-3, 3);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(g(rng), g(rng), g(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Mat3 random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return train::random_rotation(rng);
}

inline ad::Tensor random_tensor(ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  ad::Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("msecnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// One train-mode pass so eval-mode batch norm has statistics.
inline void warm_up(model::Network& net, const model::PatchGeometry& g) {
  ad::TapeOptions o;
  o.norm_mode = ad::NormMode::kTrain;
  ad::Tape t(&net.params(), o);
  net.forward(t, g);
}

inline ad::Tensor eval_normals(const model::Network& net, const model::PatchGeometry& g) {
  ad::TapeOptions o;
  o.norm_mode = ad::NormMode::kEval;
  o.update_running_stats = false;
  ad::Tape t(const_cast<ad::ParameterStore*>(&net.params()), o);
  return t.value(net.forward(t, g).normals);
}

/// Patch-like input: a noisy bent sheet inside the unit ball.
inline std::vector<Vec3> sheet_patch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  std::normal_distribution<double> g(0.0, 0.01);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) {
    const double x = u(rng), y = u(rng);
    p = Vec3(x, y, 0.3 * std::abs(x) + g(rng));
  }
  return pts;
}

}  // namespace msecnet::testing
