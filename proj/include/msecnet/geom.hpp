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

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msecnet/error.hpp"

namespace msecnet::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Coordinates plus optional per-point ground truth for one shape.
struct PointCloud {
  std::vector<Vec3> coords;
  std::optional<std::vector<Vec3>> normals;
  // Points within the edge band of an analytic crease (synthetic shapes only).
  std::optional<std::vector<std::uint8_t>> edge_band;

  std::size_t size() const { return coords.size(); }

  void validate() const {
    MSECNET_REQUIRE(!coords.empty(), ErrorKind::kInvalidArgument, "point cloud is empty");
    for (std::size_t i = 0; i < coords.size(); ++i) {
      MSECNET_REQUIRE(coords[i].allFinite(), ErrorKind::kInvalidArgument,
              "non-finite coordinate at point " + std::to_string(i));
    }
    if (normals) {
      MSECNET_REQUIRE(normals->size() == coords.size(), ErrorKind::kConsistency,
              "normal count " + std::to_string(normals->size()) + " differs from point count " +
                  std::to_string(coords.size()));
      for (std::size_t i = 0; i < normals->size(); ++i) {
        MSECNET_REQUIRE(std::abs((*normals)[i].norm() - 1.0) <= 1e-6, ErrorKind::kInvalidArgument,
                "normal at point " + std::to_string(i) + " is not unit length");
      }
    }
    if (edge_band) {
      MSECNET_REQUIRE(edge_band->size() == coords.size(), ErrorKind::kConsistency,
              "edge band mask size differs from point count");
    }
  }
};

/// Per-query neighbor lists of fixed size k, row-major, nearest first.
struct NeighborGraph {
  std::size_t k = 0;
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // squared

  std::size_t queries() const { return k == 0 ? 0 : indices.size() / k; }
  std::span<const std::size_t> row(std::size_t q) const { return {indices.data() + q * k, k}; }
  std::span<const double> row_distances(std::size_t q) const {
    return {distances.data() + q * k, k};
  }
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

namespace detail {

inline void require_finite(std::span<const Vec3> pts, const char* what) {
  for (std::size_t i = 0; i < pts.size(); ++i) {
    MSECNET_REQUIRE(pts[i].allFinite(), ErrorKind::kInvalidArgument,
            std::string("non-finite coordinate in ") + what + " at index " + std::to_string(i));
  }
}

// Ordered (distance, index) candidate list of bounded size.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) { items_.reserve(k + 1); }

  bool full() const { return items_.size() == k_; }
  double worst() const { return items_.back().first; }

  void offer(double d2, std::size_t idx) {
    const std::pair<double, std::size_t> c{d2, idx};
    if (full() && !(c < items_.back())) return;
    auto pos = std::upper_bound(items_.begin(), items_.end(), c);
    items_.insert(pos, c);
    if (items_.size() > k_) items_.pop_back();
  }

  void write(std::size_t* idx, double* d2) const {
    for (std::size_t m = 0; m < items_.size(); ++m) {
      idx[m] = items_[m].second;
      d2[m] = items_[m].first;
    }
  }

 private:
  std::size_t k_;
  std::vector<std::pair<double, std::size_t>> items_;
};

}  // namespace detail

/// Static kd-tree over a borrowed point array. Exact k-nearest queries with
/// the (squared distance, index) lexicographic order.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 16)
      : points_(points), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points.empty()) build(0, points.size());
  }

  std::size_t size() const { return points_.size(); }

  void query(const Vec3& q, std::size_t k, std::size_t* out_idx, double* out_d2) const {
    detail::BestK best(k);
    if (!nodes_.empty()) search(0, q, best);
    best.write(out_idx, out_d2);
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] == lo[axis]) return id;  // all coincident

    const std::size_t mid = begin + (end - begin) / 2;
    auto less = [&](std::size_t a, std::size_t b) {
      const double ca = points_[a][axis], cb = points_[b][axis];
      return ca < cb || (ca == cb && a < b);
    };
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, less);
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    Node& n = nodes_[id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void search(std::size_t id, const Vec3& q, detail::BestK& best) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t p = order_[i];
        best.offer(squared_distance(points_[p], q), p);
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff < 0 ? n.left : n.right;
    const std::size_t far = diff < 0 ? n.right : n.left;
    search(near, q, best);
    // Points beyond the split plane are at least diff^2 away; equality is
    // still visited so that index tie-breaks stay exact.
    if (!best.full() || diff * diff <= best.worst()) search(far, q, best);
  }

  std::span<const Vec3> points_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

namespace detail {

inline NeighborGraph knn_brute(std::span<const Vec3> points, std::span<const Vec3> queries,
                               std::size_t k) {
  NeighborGraph g;
  g.k = k;
  g.indices.resize(queries.size() * k);
  g.distances.resize(queries.size() * k);
  std::vector<std::pair<double, std::size_t>> cand(points.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t p = 0; p < points.size(); ++p) {
      cand[p] = {squared_distance(points[p], queries[q]), p};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t m = 0; m < k; ++m) {
      g.indices[q * k + m] = cand[m].second;
      g.distances[q * k + m] = cand[m].first;
    }
  }
  return g;
}

}  // namespace detail

/// k nearest points for each query, ties broken by lower point index.
inline NeighborGraph knn(std::span<const Vec3> points, std::span<const Vec3> queries,
                         std::size_t k) {
  MSECNET_REQUIRE(k >= 1, ErrorKind::kInvalidArgument, "knn requires k >= 1");
  MSECNET_REQUIRE(k <= points.size(), ErrorKind::kInvalidArgument,
          "knn: k=" + std::to_string(k) + " exceeds point count " + std::to_string(points.size()));
  detail::require_finite(points, "points");
  detail::require_finite(queries, "queries");
  if (points.size() <= 256) return detail::knn_brute(points, queries, k);

  KdTree tree(points);
  NeighborGraph g;
  g.k = k;
  g.indices.resize(queries.size() * k);
  g.distances.resize(queries.size() * k);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    tree.query(queries[q], k, g.indices.data() + q * k, g.distances.data() + q * k);
  }
  return g;
}

/// Greedy farthest-point subsampling; returns m distinct indices starting at `start`.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points,
                                                      std::size_t m, std::size_t start = 0) {
  MSECNET_REQUIRE(m >= 1 && m <= points.size(), ErrorKind::kInvalidArgument,
          "farthest_point_sample: m=" + std::to_string(m) + " outside [1, " +
              std::to_string(points.size()) + "]");
  MSECNET_REQUIRE(start < points.size(), ErrorKind::kInvalidArgument,
          "farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> taken(points.size(), 0);
  std::size_t current = start;
  for (std::size_t s = 0; s < m; ++s) {
    picked.push_back(current);
    taken[current] = 1;
    if (s + 1 == m) break;
    std::size_t best = points.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], squared_distance(points[i], points[current]));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

/// Three-nearest-source inverse-distance weights for every target.
struct InterpPlan {
  std::size_t sources = 0;
  std::vector<std::array<std::size_t, 3>> indices;
  std::vector<std::array<double, 3>> weights;

  std::size_t targets() const { return indices.size(); }
};

inline constexpr double kInterpEps = 1e-8;
inline constexpr double kCoincidentDistance = 1e-12;

inline InterpPlan interp3nn_weights(std::span<const Vec3> sources, std::span<const Vec3> targets) {
  MSECNET_REQUIRE(sources.size() >= 3, ErrorKind::kInvalidArgument,
          "interpolation needs at least 3 sources, got " + std::to_string(sources.size()));
  const NeighborGraph g = knn(sources, targets, 3);
  InterpPlan plan;
  plan.sources = sources.size();
  plan.indices.resize(targets.size());
  plan.weights.resize(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto& idx = plan.indices[t];
    auto& w = plan.weights[t];
    for (int m = 0; m < 3; ++m) idx[m] = g.indices[t * 3 + m];
    const double d0 = std::sqrt(g.distances[t * 3]);
    if (d0 < kCoincidentDistance) {
      w = {1.0, 0.0, 0.0};
      continue;
    }
    double total = 0.0;
    for (int m = 0; m < 3; ++m) {
      w[m] = 1.0 / (std::sqrt(g.distances[t * 3 + m]) + kInterpEps);
      total += w[m];
    }
    for (int m = 0; m < 3; ++m) w[m] /= total;
  }
  return plan;
}

/// Sign convention for eigenvectors: the largest-magnitude component is made
/// positive; among equal magnitudes, the first nonzero one decides.
inline Vec3 canonical_sign(const Vec3& v) {
  const double top = v.cwiseAbs().maxCoeff();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(v[i]) == top && v[i] != 0.0) return v[i] < 0 ? Vec3(-v) : v;
  }
  return v;
}

inline Mat3 covariance(std::span<const Vec3> pts) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 c = Mat3::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - mean;
    c.noalias() += d * d.transpose();
  }
  return c / static_cast<double>(pts.size());
}

struct Alignment {
  std::vector<Vec3> coords;
  Mat3 rotation = Mat3::Identity();
  bool degenerate = false;  // covariance vanished; identity returned
};

/// Rotates points into their principal-component frame (rows of the rotation
/// are eigenvectors by descending eigenvalue, det = +1).
inline Alignment pca_align(std::span<const Vec3> pts) {
  MSECNET_REQUIRE(pts.size() >= 3, ErrorKind::kInvalidArgument, "pca_align needs at least 3 points");
  Alignment out;
  const Mat3 cov = covariance(pts);
  if (cov.cwiseAbs().maxCoeff() == 0.0) {
    out.degenerate = true;
    out.coords.assign(pts.begin(), pts.end());
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Mat3 r;
  for (int row = 0; row < 3; ++row) {
    r.row(row) = canonical_sign(eig.eigenvectors().col(2 - row)).transpose();
  }
  if (r.determinant() < 0) r.row(2) *= -1.0;
  out.rotation = r;
  out.coords.resize(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out.coords[i] = r * pts[i];
  return out;
}

/// Classical PCA normal: smallest-variance direction of the neighborhood.
inline Vec3 pca_normal(std::span<const Vec3> neighborhood) {
  MSECNET_REQUIRE(neighborhood.size() >= 3, ErrorKind::kInvalidArgument,
          "pca_normal needs at least 3 points");
  const Mat3 cov = covariance(neighborhood);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();
  const double scale = std::max(ev[2], 0.0);
  MSECNET_REQUIRE(scale > 0.0 && ev[1] > 1e-12 * scale, ErrorKind::kDegenerate,
          "neighborhood is collinear or coincident");
  return canonical_sign(eig.eigenvectors().col(0).normalized());
}

/// N-point neighborhood around a center, in a normalized principal frame.
struct Patch {
  std::vector<Vec3> local_coords;
  std::vector<std::size_t> parent_indices;
  std::size_t center_index = 0;  // position of the query point within the patch
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  bool degenerate_alignment = false;

  std::size_t size() const { return local_coords.size(); }

  /// World-frame direction -> patch frame.
  Vec3 to_local_direction(const Vec3& d) const { return rotation * d; }
  Vec3 to_world_direction(const Vec3& d) const { return rotation.transpose() * d; }
};

namespace detail {

inline Patch finish_patch(std::span<const Vec3> coords, std::size_t center,
                          std::vector<std::size_t> parents, double max_d2, const Mat3* pre_rotation) {
  Patch patch;
  patch.translation = coords[center];
  patch.scale = std::sqrt(max_d2);
  MSECNET_REQUIRE(patch.scale > 0.0, ErrorKind::kDegenerate,
          "patch around point " + std::to_string(center) + " has zero extent");
  std::vector<Vec3> local(parents.size());
  for (std::size_t i = 0; i < parents.size(); ++i) {
    local[i] = (coords[parents[i]] - patch.translation) / patch.scale;
    if (pre_rotation) local[i] = *pre_rotation * local[i];
  }
  auto pos = std::find(parents.begin(), parents.end(), center);
  MSECNET_REQUIRE(pos != parents.end(), ErrorKind::kInvalidArgument, "patch does not contain its center");
  patch.center_index = static_cast<std::size_t>(pos - parents.begin());
  Alignment a = pca_align(local);
  patch.local_coords = std::move(a.coords);
  patch.rotation = pre_rotation ? Mat3(a.rotation * *pre_rotation) : a.rotation;
  patch.degenerate_alignment = a.degenerate;
  patch.parent_indices = std::move(parents);
  return patch;
}

}  // namespace detail

/// Patch extraction against a prebuilt tree (repeated extraction from one cloud).
/// A pre-rotation is applied before alignment and folded into the recorded rotation.
inline Patch extract_patch(const KdTree& tree, std::span<const Vec3> coords, std::size_t center,
                           std::size_t n, const Mat3* pre_rotation = nullptr) {
  MSECNET_REQUIRE(center < coords.size(), ErrorKind::kInvalidArgument, "patch center out of range");
  MSECNET_REQUIRE(n >= 3 && n <= coords.size(), ErrorKind::kInvalidArgument,
          "patch size " + std::to_string(n) + " outside [3, " + std::to_string(coords.size()) +
              "]");
  std::vector<std::size_t> parents(n);
  std::vector<double> d2(n);
  tree.query(coords[center], n, parents.data(), d2.data());
  return detail::finish_patch(coords, center, std::move(parents), d2.back(), pre_rotation);
}

inline Patch extract_patch(const PointCloud& cloud, std::size_t center, std::size_t n) {
  MSECNET_REQUIRE(n <= cloud.size(), ErrorKind::kInvalidArgument,
          "patch size " + std::to_string(n) + " exceeds cloud size " +
              std::to_string(cloud.size()));
  const KdTree tree(cloud.coords);
  return extract_patch(tree, cloud.coords, center, n);
}

}  // namespace msecnet::geom
