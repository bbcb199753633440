// Copyright 2026 The ssflow Authors
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
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "ssflow/error.hpp"

namespace ssflow {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// A cloud of 3-D points in scene units.
struct PointSet {
  std::vector<Vec3> coords;

  PointSet() = default;
  explicit PointSet(std::vector<Vec3> c) : coords(std::move(c)) {}

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  const Vec3& operator[](std::size_t i) const { return coords[i]; }
  Vec3& operator[](std::size_t i) { return coords[i]; }

  bool all_finite() const {
    for (const auto& p : coords) {
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) return false;
    }
    return true;
  }

  PointSet subset(const std::vector<std::size_t>& indices) const {
    PointSet out;
    out.coords.reserve(indices.size());
    for (std::size_t i : indices) out.coords.push_back(coords.at(i));
    return out;
  }
};

struct Neighbor {
  std::size_t index;
  double distance;
};

// Per query point, neighbors ordered by (distance, index).
struct NeighborList {
  std::vector<std::vector<Neighbor>> lists;
  bool truncated = false;

  std::size_t size() const { return lists.size(); }
  const std::vector<Neighbor>& operator[](std::size_t i) const { return lists[i]; }
};

struct SearchOptions {
  // Scan every reference point instead of using the k-d tree. Both paths
  // return identical lists.
  bool brute_force = false;
  // Skip reference index i for query index i (query and reference are the
  // same cloud).
  bool exclude_self = false;
  // Radius queries keep at most this many nearest neighbors.
  std::size_t max_neighbors = 64;
};

namespace detail {

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

inline constexpr std::size_t kNoExclude = std::numeric_limits<std::size_t>::max();

}  // namespace detail

// Static k-d tree over a reference cloud.
class KdTree {
 public:
  explicit KdTree(const PointSet& ref) : ref_(&ref) {
    order_.resize(ref.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!order_.empty()) build(0, order_.size());
  }

  // k best candidates by (d2, index), sorted.
  std::vector<detail::Candidate> nearest(const Vec3& q, std::size_t k, std::size_t exclude) const {
    std::priority_queue<detail::Candidate> heap;
    if (!nodes_.empty() && k > 0) search_knn(0, q, k, exclude, heap);
    std::vector<detail::Candidate> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

  // Every candidate with d2 < r2, unsorted.
  void within(const Vec3& q, double r2, std::size_t exclude, std::vector<detail::Candidate>& out) const {
    if (!nodes_.empty()) search_radius(0, q, r2, exclude, out);
  }

 private:
  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };
  static constexpr std::size_t kLeafSize = 12;

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi{-lo[0], -lo[1], -lo[2]};
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = (*ref_)[order_[i]];
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    }
    if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return (*ref_)[a][axis] < (*ref_)[b][axis]; });
    const double split = (*ref_)[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search_knn(std::size_t id, const Vec3& q, std::size_t k, std::size_t exclude,
                  std::priority_queue<detail::Candidate>& heap) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const detail::Candidate c{squared_distance(q, (*ref_)[idx]), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    // Left holds coordinates <= split, right holds >= split.
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff <= 0.0 ? n.left : n.right;
    const std::size_t far = diff <= 0.0 ? n.right : n.left;
    search_knn(near, q, k, exclude, heap);
    if (heap.size() < k || diff * diff <= heap.top().d2) search_knn(far, q, k, exclude, heap);
  }

  void search_radius(std::size_t id, const Vec3& q, double r2, std::size_t exclude,
                     std::vector<detail::Candidate>& out) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const double d2 = squared_distance(q, (*ref_)[idx]);
        if (d2 < r2) out.push_back({d2, idx});
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const std::size_t near = diff <= 0.0 ? n.left : n.right;
    const std::size_t far = diff <= 0.0 ? n.right : n.left;
    search_radius(near, q, r2, exclude, out);
    if (diff * diff < r2) search_radius(far, q, r2, exclude, out);
  }

  const PointSet* ref_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// k nearest reference points for every query point, ties broken by lower
// reference index.
inline NeighborList knn(const PointSet& query, const PointSet& reference, std::size_t k,
                        const SearchOptions& opts = {}) {
  if (k == 0) throw QueryError("knn: k must be positive");
  const std::size_t available = reference.size() - (opts.exclude_self && reference.size() > 0 ? 1 : 0);
  if (k > available) {
    throw QueryError("knn: k=" + std::to_string(k) + " exceeds reference size " + std::to_string(reference.size()) +
                     (opts.exclude_self ? " (self excluded)" : ""));
  }
  NeighborList result;
  result.lists.resize(query.size());
  if (opts.brute_force) {
    std::vector<detail::Candidate> all;
    for (std::size_t i = 0; i < query.size(); ++i) {
      all.clear();
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (opts.exclude_self && i == j) continue;
        all.push_back({squared_distance(query[i], reference[j]), j});
      }
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
      for (std::size_t n = 0; n < k; ++n) result.lists[i].push_back({all[n].index, std::sqrt(all[n].d2)});
    }
    return result;
  }
  const KdTree tree(reference);
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto best = tree.nearest(query[i], k, opts.exclude_self ? i : detail::kNoExclude);
    for (const auto& c : best) result.lists[i].push_back({c.index, std::sqrt(c.d2)});
  }
  return result;
}

// Reference points strictly closer than r, nearest first, capped at
// opts.max_neighbors. `truncated` reports whether any list was capped.
inline NeighborList radius_neighbors(const PointSet& query, const PointSet& reference, double r,
                                     const SearchOptions& opts = {}) {
  if (!(r > 0.0)) throw ContractError("radius_neighbors: radius must be positive");
  const double r2 = r * r;
  NeighborList result;
  result.lists.resize(query.size());
  std::vector<detail::Candidate> found;
  std::unique_ptr<KdTree> tree;
  if (!opts.brute_force) tree = std::make_unique<KdTree>(reference);
  for (std::size_t i = 0; i < query.size(); ++i) {
    found.clear();
    const std::size_t exclude = opts.exclude_self ? i : detail::kNoExclude;
    if (tree) {
      tree->within(query[i], r2, exclude, found);
    } else {
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (j == exclude) continue;
        const double d2 = squared_distance(query[i], reference[j]);
        if (d2 < r2) found.push_back({d2, j});
      }
    }
    std::sort(found.begin(), found.end());
    if (found.size() > opts.max_neighbors) {
      found.resize(opts.max_neighbors);
      result.truncated = true;
    }
    auto& list = result.lists[i];
    list.reserve(found.size());
    for (const auto& c : found) list.push_back({c.index, std::sqrt(c.d2)});
  }
  return result;
}

// Greedy max-min subsampling: starts at seed_index, then repeatedly takes the
// point farthest from everything chosen so far (ties to the lower index).
// The returned order is the greedy order, so every prefix is itself a
// farthest-point sample.
inline std::vector<std::size_t> farthest_point_sample(const PointSet& pts, std::size_t m, std::size_t seed_index) {
  if (m > pts.size()) {
    throw QueryError("farthest_point_sample: m=" + std::to_string(m) + " exceeds point count " +
                     std::to_string(pts.size()));
  }
  if (m == 0) return {};
  if (seed_index >= pts.size()) throw QueryError("farthest_point_sample: seed index out of range");
  std::vector<double> min_d2(pts.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(pts.size(), false);
  std::vector<std::size_t> order;
  order.reserve(m);
  std::size_t current = seed_index;
  for (std::size_t step = 0; step < m; ++step) {
    order.push_back(current);
    chosen[current] = true;
    std::size_t best = pts.size();
    double best_d2 = -1.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (chosen[j]) continue;
      min_d2[j] = std::min(min_d2[j], squared_distance(pts[current], pts[j]));
      if (min_d2[j] > best_d2) {
        best_d2 = min_d2[j];
        best = j;
      }
    }
    current = best;
  }
  return order;
}

// Index of the lexicographically smallest coordinate triple (lowest index on
// exact duplicates).
inline std::size_t lexicographic_min_index(const PointSet& pts) {
  if (pts.empty()) throw QueryError("lexicographic_min_index: empty point set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i] < pts[best]) best = i;
  }
  return best;
}

}  // namespace ssflow
