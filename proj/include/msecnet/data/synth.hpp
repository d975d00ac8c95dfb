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
#include <cstdio>
#include <numeric>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "msecnet/error.hpp"
#include "msecnet/geom.hpp"

namespace msecnet::data {

using geom::PointCloud;
using geom::Vec3;

enum class ShapeKind { kDihedral, kSphere, kCube, kCylinder };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  double angle_deg = 90.0;  // dihedral only: angle between the two faces
};

/// Edge-band half-width as a fraction of the bounding-box diagonal.
inline constexpr double kEdgeBandFraction = 0.02;

inline ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "dihedral") return ShapeKind::kDihedral;
  if (name == "sphere") return ShapeKind::kSphere;
  if (name == "cube") return ShapeKind::kCube;
  if (name == "cylinder") return ShapeKind::kCylinder;
  fail(ErrorKind::kInvalidArgument, "unknown shape kind '" + name + "'");
}

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kDihedral: return "dihedral";
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kCube: return "cube";
    case ShapeKind::kCylinder: return "cylinder";
  }
  return "unknown";
}

inline double bbox_diagonal(const std::vector<Vec3>& coords) {
  MSECNET_REQUIRE(!coords.empty(), ErrorKind::kInvalidArgument, "bounding box of an empty set");
  Vec3 lo = coords.front(), hi = coords.front();
  for (const Vec3& p : coords) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).norm();
}

namespace detail {

// Surfaces in canonical frames. Each sample records its distance to the
// nearest crease (infinity for smooth shapes).
struct Sample {
  Vec3 p, n;
  double crease_distance;
};

inline Sample sample_dihedral(std::mt19937_64& rng, double angle) {
  // Face A: z = 0, y in [0, 1]. Face B: the ray (0, cos a, sin a), same extent.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = 2.0 * u(rng) - 1.0;
  const double t = u(rng);
  const bool face_b = u(rng) < 0.5;
  const Vec3 na(0.0, 0.0, 1.0);
  const Vec3 nb(0.0, std::sin(angle), -std::cos(angle));
  if (t == 0.0) return {Vec3(x, 0.0, 0.0), (na + nb).normalized(), 0.0};
  if (!face_b) return {Vec3(x, t, 0.0), na, t};
  return {Vec3(x, t * std::cos(angle), t * std::sin(angle)), nb, t};
}

inline Sample sample_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(g(rng), g(rng), g(rng));
  } while (v.norm() < 1e-12);
  v.normalize();
  return {v, v, std::numeric_limits<double>::infinity()};
}

inline Sample sample_cube(std::mt19937_64& rng) {
  // Side 2 centered at the origin; faces have equal area.
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int f = face(rng);
  const int axis = f / 2;
  const double side = (f % 2 == 0) ? 1.0 : -1.0;
  const double a = u(rng), b = u(rng);
  Vec3 p, n = Vec3::Zero();
  p[axis] = side;
  p[(axis + 1) % 3] = a;
  p[(axis + 2) % 3] = b;
  n[axis] = side;
  return {p, n, std::min(1.0 - std::abs(a), 1.0 - std::abs(b))};
}

inline Sample sample_cylinder(std::mt19937_64& rng) {
  // Radius 1, z in [-1, 1], closed by two caps. Lateral area 4 pi, caps 2 pi.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pick = u(rng) * 6.0;
  const double phi = 2.0 * std::numbers::pi * u(rng);
  if (pick < 4.0) {
    const double z = 2.0 * u(rng) - 1.0;
    const Vec3 n(std::cos(phi), std::sin(phi), 0.0);
    return {Vec3(n.x(), n.y(), z), n, 1.0 - std::abs(z)};
  }
  const double r = std::sqrt(u(rng));
  const double side = pick < 5.0 ? 1.0 : -1.0;
  return {Vec3(r * std::cos(phi), r * std::sin(phi), side), Vec3(0.0, 0.0, side), 1.0 - r};
}

}  // namespace detail

/// Uniform-area samples with exact normals. Shapes with creases carry an
/// edge-band mask; points exactly on a dihedral crease get the bisector normal.
inline PointCloud synth_shape(const ShapeSpec& spec, std::size_t n, std::uint64_t seed) {
  MSECNET_REQUIRE(n >= 100, ErrorKind::kInvalidArgument, "synthetic shapes need at least 100 points");
  if (spec.kind == ShapeKind::kDihedral) {
    MSECNET_REQUIRE(spec.angle_deg > 0.0 && spec.angle_deg < 180.0, ErrorKind::kInvalidArgument,
            "dihedral angle must be in (0, 180) degrees");
  }
  std::mt19937_64 rng(seed);
  const double angle = spec.angle_deg * std::numbers::pi / 180.0;
  std::vector<detail::Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (spec.kind) {
      case ShapeKind::kDihedral: samples.push_back(detail::sample_dihedral(rng, angle)); break;
      case ShapeKind::kSphere: samples.push_back(detail::sample_sphere(rng)); break;
      case ShapeKind::kCube: samples.push_back(detail::sample_cube(rng)); break;
      case ShapeKind::kCylinder: samples.push_back(detail::sample_cylinder(rng)); break;
    }
  }
  PointCloud cloud;
  cloud.coords.reserve(n);
  std::vector<Vec3> normals;
  normals.reserve(n);
  for (const auto& s : samples) {
    cloud.coords.push_back(s.p);
    normals.push_back(s.n);
  }
  cloud.normals = std::move(normals);
  if (spec.kind != ShapeKind::kSphere) {
    const double band = kEdgeBandFraction * bbox_diagonal(cloud.coords);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = samples[i].crease_distance <= band ? 1 : 0;
    cloud.edge_band = std::move(mask);
  }
  return cloud;
}

/// Per-axis Gaussian displacement with standard deviation sigma times the
/// bounding-box diagonal. Normals and edge band are kept as they are.
inline PointCloud add_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed) {
  MSECNET_REQUIRE(sigma_fraction >= 0.0 && std::isfinite(sigma_fraction), ErrorKind::kInvalidArgument,
          "noise level must be finite and non-negative");
  PointCloud out = cloud;
  if (sigma_fraction == 0.0) return out;
  const double sigma = sigma_fraction * bbox_diagonal(cloud.coords);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  for (Vec3& p : out.coords) {
    for (int c = 0; c < 3; ++c) p[c] += g(rng);
  }
  return out;
}

enum class DensityMode { kStripes, kGradient };

struct Subset {
  PointCloud cloud;
  std::vector<std::size_t> source_indices;  // into the original cloud
};

inline constexpr std::size_t kMinSurvivors = 100;

namespace detail {

inline Subset take(const PointCloud& cloud, const std::vector<std::uint8_t>& keep) {
  Subset out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!keep[i]) continue;
    out.source_indices.push_back(i);
    out.cloud.coords.push_back(cloud.coords[i]);
  }
  if (cloud.normals) {
    out.cloud.normals.emplace();
    for (std::size_t i : out.source_indices) out.cloud.normals->push_back((*cloud.normals)[i]);
  }
  if (cloud.edge_band) {
    out.cloud.edge_band.emplace();
    for (std::size_t i : out.source_indices) out.cloud.edge_band->push_back((*cloud.edge_band)[i]);
  }
  return out;
}

}  // namespace detail

/// Stripes: planar slabs of period diagonal/10 along a seeded direction with
/// a seeded phase; the first half of every period survives. Gradient: keep
/// probability falls linearly from 1.0 to 0.1 along the first principal axis.
inline Subset density_corrupt(const PointCloud& cloud, DensityMode mode, std::uint64_t seed) {
  MSECNET_REQUIRE(!cloud.coords.empty(), ErrorKind::kInvalidArgument, "density corruption of an empty cloud");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> keep(cloud.size(), 0);
  if (mode == DensityMode::kStripes) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 dir;
    do {
      dir = Vec3(g(rng), g(rng), g(rng));
    } while (dir.norm() < 1e-12);
    dir.normalize();
    const double period = bbox_diagonal(cloud.coords) / 10.0;
    const double phase = u(rng) * period;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double s = (cloud.coords[i].dot(dir) + phase) / period;
      keep[i] = (s - std::floor(s)) < 0.5 ? 1 : 0;
    }
  } else {
    const geom::Mat3 cov = geom::covariance(cloud.coords);
    Eigen::SelfAdjointEigenSolver<geom::Mat3> eig(cov);
    const Vec3 axis = geom::canonical_sign(eig.eigenvectors().col(2));
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Vec3& p : cloud.coords) {
      lo = std::min(lo, p.dot(axis));
      hi = std::max(hi, p.dot(axis));
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double t = span > 0.0 ? (cloud.coords[i].dot(axis) - lo) / span : 0.0;
      const double p = 1.0 - 0.9 * t;
      keep[i] = u(rng) < p ? 1 : 0;
    }
  }
  Subset out = detail::take(cloud, keep);
  MSECNET_REQUIRE(out.cloud.size() >= kMinSurvivors, ErrorKind::kDegenerate,
          "density corruption left " + std::to_string(out.cloud.size()) + " points, fewer than 100");
  return out;
}

enum class CorruptionKind { kNone, kNoise, kStripes, kGradient };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kNone;
  double sigma = 0.0;  // noise only, fraction of the bounding-box diagonal
  std::uint64_t seed = 0;

  /// Stable label used in reports, e.g. "noise_0.006".
  std::string label() const {
    switch (kind) {
      case CorruptionKind::kNone: return "none";
      case CorruptionKind::kNoise: {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "noise_%g", sigma);
        return buf;
      }
      case CorruptionKind::kStripes: return "stripes";
      case CorruptionKind::kGradient: return "gradient";
    }
    return "unknown";
  }
};

inline CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "none") return CorruptionKind::kNone;
  if (name == "noise") return CorruptionKind::kNoise;
  if (name == "stripes") return CorruptionKind::kStripes;
  if (name == "gradient") return CorruptionKind::kGradient;
  fail(ErrorKind::kInvalidArgument, "unknown corruption kind '" + name + "'");
}

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kNone: return "none";
    case CorruptionKind::kNoise: return "noise";
    case CorruptionKind::kStripes: return "stripes";
    case CorruptionKind::kGradient: return "gradient";
  }
  return "unknown";
}

/// Applies one corruption; source_indices is the identity unless points are removed.
inline Subset corrupt(const PointCloud& cloud, const CorruptionSpec& spec) {
  switch (spec.kind) {
    case CorruptionKind::kStripes: return density_corrupt(cloud, DensityMode::kStripes, spec.seed);
    case CorruptionKind::kGradient: return density_corrupt(cloud, DensityMode::kGradient, spec.seed);
    case CorruptionKind::kNone:
    case CorruptionKind::kNoise: break;
  }
  Subset out;
  out.cloud = spec.kind == CorruptionKind::kNoise ? add_noise(cloud, spec.sigma, spec.seed) : cloud;
  out.source_indices.resize(cloud.size());
  std::iota(out.source_indices.begin(), out.source_indices.end(), std::size_t{0});
  return out;
}

}  // namespace msecnet::data
