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

#include "ssflow/diffcore.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/geometry.hpp"

namespace ssflow {

struct LossWeights {
  double alpha = 0.75;   // chamfer
  double beta = 0.25;    // weighted smooth
  double beta1 = 1.0;    // neighborhoods centered on unlabeled points
  double beta2 = 2.0;    // neighborhoods centered on labeled points
  double r_smooth = 0.5;
  // Divide each chamfer direction by its point count.
  bool chamfer_mean = false;
  std::size_t max_neighbors = 64;

  void validate() const {
    if (alpha < 0 || beta < 0 || beta1 < 0 || beta2 < 0) throw ContractError("loss weights must be nonnegative");
    if (!(alpha + beta > 0)) throw ContractError("loss weights: alpha + beta must be positive");
    if (!(r_smooth > 0)) throw ContractError("loss weights: r_smooth must be positive");
  }
};

// Sum over both directions of squared nearest-neighbor distances between
// the warped cloud and Q. Nearest neighbors are fixed at the current
// positions, so the gradient is the piecewise-smooth one.
inline ad::Var chamfer_loss(ad::Tape& tape, ad::Var warped, const PointSet& q, bool mean = false) {
  if (warped.rows() == 0 || q.empty()) throw ContractError("chamfer_loss: both point sets must be non-empty");
  if (warped.cols() != 3) throw DimensionError("chamfer_loss: warped points must be n x 3");
  const PointSet warped_pts(to_flow(warped.value()));
  const NeighborList forward = knn(warped_pts, q, 1);
  const NeighborList backward = knn(q, warped_pts, 1);
  std::vector<std::size_t> fwd_idx(warped_pts.size()), bwd_idx(q.size());
  for (std::size_t i = 0; i < fwd_idx.size(); ++i) fwd_idx[i] = forward[i].front().index;
  for (std::size_t j = 0; j < bwd_idx.size(); ++j) bwd_idx[j] = backward[j].front().index;
  ad::Var q_var = tape.constant(to_tensor(q));
  ad::Var to_q = ad::sum_squares(ad::sub(warped, ad::gather_rows(q_var, fwd_idx)));
  ad::Var to_p = ad::sum_squares(ad::sub(q_var, ad::gather_rows(warped, bwd_idx)));
  if (mean) {
    to_q = ad::scale(to_q, 1.0 / static_cast<double>(warped_pts.size()));
    to_p = ad::scale(to_p, 1.0 / static_cast<double>(q.size()));
  }
  return ad::add(to_q, to_p);
}

inline double chamfer_loss(const PointSet& warped, const PointSet& q, bool mean = false) {
  ad::Tape tape;
  return chamfer_loss(tape, tape.constant(to_tensor(warped)), q, mean).value().item();
}

namespace detail {

struct SmoothGraph {
  std::vector<std::size_t> centers, neighbors;
  std::vector<double> unlabeled_weight;  // 1/|N_i| on unlabeled-centered edges, else 0
  std::vector<double> labeled_weight;    // 1/|N'_i| on labeled-centered edges, else 0
};

inline SmoothGraph smooth_graph(const PointSet& p, const std::vector<bool>& labeled, const LossWeights& w) {
  SearchOptions opts;
  opts.exclude_self = true;
  opts.max_neighbors = w.max_neighbors;
  const NeighborList nbrs = radius_neighbors(p, p, w.r_smooth, opts);
  SmoothGraph g;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& list = nbrs[i];
    if (list.empty()) continue;
    const double inv = 1.0 / static_cast<double>(list.size());
    for (const auto& nb : list) {
      g.centers.push_back(i);
      g.neighbors.push_back(nb.index);
      g.unlabeled_weight.push_back(labeled[i] ? 0.0 : inv);
      g.labeled_weight.push_back(labeled[i] ? inv : 0.0);
    }
  }
  return g;
}

}  // namespace detail

// beta1 * sum over unlabeled centers of the mean ||f_i - f_j|| over their
// r-neighborhood, plus beta2 * the same over labeled centers. Neighborhoods
// exclude the center; an empty neighborhood contributes nothing.
inline ad::Var weighted_smooth_loss(ad::Tape& tape, const PointSet& p, ad::Var flow, const LabelSet& labels,
                                    const LossWeights& w) {
  if (flow.rows() != p.size() || flow.cols() != 3) {
    throw DimensionError("weighted_smooth_loss: flow must be " + std::to_string(p.size()) + " x 3");
  }
  const auto g = detail::smooth_graph(p, labels.mask(p.size()), w);
  if (g.centers.empty()) return tape.constant(ad::Tensor::scalar(0.0));
  ad::Tensor weights = ad::Tensor::matrix(g.centers.size(), 1);
  for (std::size_t e = 0; e < g.centers.size(); ++e) {
    weights.data[e] = w.beta1 * g.unlabeled_weight[e] + w.beta2 * g.labeled_weight[e];
  }
  ad::Var diff = ad::sub(ad::gather_rows(flow, g.centers), ad::gather_rows(flow, g.neighbors));
  return ad::weighted_sum(ad::row_norms(diff), std::move(weights));
}

inline double weighted_smooth_loss(const PointSet& p, const FlowField& flow, const LabelSet& labels,
                                   const LossWeights& w) {
  ad::Tape tape;
  return weighted_smooth_loss(tape, p, tape.constant(to_tensor(flow)), labels, w).value().item();
}

// The two unweighted sums of the smooth loss, (unlabeled-centered,
// labeled-centered).
inline std::pair<double, double> smooth_terms(const PointSet& p, const FlowField& flow, const LabelSet& labels,
                                              const LossWeights& w) {
  const auto g = detail::smooth_graph(p, labels.mask(p.size()), w);
  double unlabeled = 0.0, labeled = 0.0;
  for (std::size_t e = 0; e < g.centers.size(); ++e) {
    const double d = norm(flow[g.centers[e]] - flow[g.neighbors[e]]);
    unlabeled += g.unlabeled_weight[e] * d;
    labeled += g.labeled_weight[e] * d;
  }
  return {unlabeled, labeled};
}

// alpha * chamfer(P + F, Q) + beta * weighted_smooth(P, F).
inline ad::Var total_loss(ad::Tape& tape, const PointSet& p, ad::Var flow, const PointSet& q, const LabelSet& labels,
                          const LossWeights& w) {
  w.validate();
  ad::Var warped = ad::add(tape.constant(to_tensor(p)), flow);
  ad::Var chamfer = chamfer_loss(tape, warped, q, w.chamfer_mean);
  ad::Var smooth = weighted_smooth_loss(tape, p, flow, labels, w);
  return ad::add(ad::scale(chamfer, w.alpha), ad::scale(smooth, w.beta));
}

inline double total_loss(const PointSet& p, const FlowField& flow, const PointSet& q, const LabelSet& labels,
                         const LossWeights& w) {
  ad::Tape tape;
  return total_loss(tape, p, tape.constant(to_tensor(flow)), q, labels, w).value().item();
}

}  // namespace ssflow
