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

#include <string>
#include <vector>

#include "ssflow/diffcore/tensor.hpp"
#include "ssflow/error.hpp"
#include "ssflow/geometry.hpp"

namespace ssflow {

// Per-point 3-vector motion (meters per frame, or scene units).
using FlowField = std::vector<Vec3>;

inline ad::Tensor to_tensor(const PointSet& pts) {
  ad::Tensor t = ad::Tensor::matrix(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int c = 0; c < 3; ++c) t(i, c) = pts[i][c];
  }
  return t;
}

inline ad::Tensor to_tensor(const FlowField& f) { return to_tensor(PointSet(f)); }

inline FlowField to_flow(const ad::Tensor& t) {
  if (t.cols() != 3) throw DimensionError("to_flow: expected n x 3, got " + ad::shape_string(t.shape));
  FlowField f(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) f[i] = {t(i, 0), t(i, 1), t(i, 2)};
  return f;
}

// The labeled subset of P: indices into P and their ground-truth flows.
struct LabelSet {
  std::vector<std::size_t> indices;
  FlowField flows;

  std::size_t size() const { return indices.size(); }

  // Requires 1 <= labels < n, unique in-range indices and one flow per index.
  void validate(std::size_t n) const {
    if (indices.size() != flows.size()) {
      throw ContractError("label set: " + std::to_string(indices.size()) + " indices but " +
                          std::to_string(flows.size()) + " flows");
    }
    if (indices.empty()) throw ContractError("label set: at least one labeled point is required");
    if (indices.size() >= n) {
      throw ContractError("label set: " + std::to_string(indices.size()) + " labels for " + std::to_string(n) +
                          " points, labeled count must be smaller than the cloud");
    }
    std::vector<bool> seen(n, false);
    for (std::size_t i : indices) {
      if (i >= n) throw ContractError("label set: index " + std::to_string(i) + " out of range");
      if (seen[i]) throw ContractError("label set: duplicate index " + std::to_string(i));
      seen[i] = true;
    }
  }

  std::vector<bool> mask(std::size_t n) const {
    std::vector<bool> m(n, false);
    for (std::size_t i : indices) m.at(i) = true;
    return m;
  }

  // Builds a label set by reading the given indices out of a full flow field.
  static LabelSet from_field(std::vector<std::size_t> indices, const FlowField& field) {
    LabelSet l;
    l.flows.reserve(indices.size());
    for (std::size_t i : indices) l.flows.push_back(field.at(i));
    l.indices = std::move(indices);
    return l;
  }
};

// Complement of the labeled indices, ascending.
inline std::vector<std::size_t> unlabeled_indices(std::size_t n, const LabelSet& labels) {
  const auto m = labels.mask(n);
  std::vector<std::size_t> out;
  out.reserve(n - labels.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!m[i]) out.push_back(i);
  }
  return out;
}

// Inverse-distance-weighted blend of the k nearest labeled flows for every
// unlabeled point; labeled points keep their label verbatim. A labeled
// neighbor at distance zero is copied (several coincident ones are averaged).
//
// The blend is accumulated as f0 + sum_j w_j (f_j - f0) around the nearest
// neighbor's flow f0, so identical neighbor flows reproduce f0 exactly.
inline FlowField coarse_upsample(const PointSet& points, const LabelSet& labels, std::size_t k,
                                 const SearchOptions& opts = {}) {
  labels.validate(points.size());
  if (k == 0 || k > labels.size()) {
    throw QueryError("coarse_upsample: k=" + std::to_string(k) + " but only " + std::to_string(labels.size()) +
                     " labeled points");
  }
  FlowField out(points.size());
  for (std::size_t n = 0; n < labels.size(); ++n) out[labels.indices[n]] = labels.flows[n];

  const auto unlabeled = unlabeled_indices(points.size(), labels);
  const PointSet labeled_points = points.subset(labels.indices);
  SearchOptions knn_opts = opts;
  knn_opts.exclude_self = false;
  const NeighborList nbrs = knn(points.subset(unlabeled), labeled_points, k, knn_opts);

  for (std::size_t u = 0; u < unlabeled.size(); ++u) {
    const auto& list = nbrs[u];
    const Vec3& anchor = labels.flows[list.front().index];
    Vec3 acc{0.0, 0.0, 0.0};
    if (list.front().distance == 0.0) {
      std::size_t coincident = 0;
      for (const auto& nb : list) {
        if (nb.distance != 0.0) break;
        ++coincident;
      }
      for (std::size_t j = 1; j < coincident; ++j) {
        acc = acc + (1.0 / static_cast<double>(coincident)) * (labels.flows[list[j].index] - anchor);
      }
    } else {
      double total = 0.0;
      for (const auto& nb : list) total += 1.0 / nb.distance;
      for (std::size_t j = 1; j < list.size(); ++j) {
        const double w = (1.0 / list[j].distance) / total;
        acc = acc + w * (labels.flows[list[j].index] - anchor);
      }
    }
    out[unlabeled[u]] = anchor + acc;
  }
  return out;
}

}  // namespace ssflow
