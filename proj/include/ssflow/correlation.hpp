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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ssflow/diffcore.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/geometry.hpp"

namespace ssflow {

// (N - N_labeled) x N_labeled, rows are unlabeled points, each row a
// probability vector over the labeled points.
using CorrelationMatrix = ad::Tensor;

struct CorrelationConfig {
  // Scores feature differences (x || x_w), width 2 * encoder width.
  ad::MlpSpec mlp_u = ad::MlpSpec::make({64, 32, 1});
  // Scores geometric differences (p || p_w), width 6.
  ad::MlpSpec mlp_g = ad::MlpSpec::make({6, 32, 1});
  // When nonzero, each unlabeled point only attends to this many labeled
  // points nearest to it in warped coordinates.
  std::size_t label_candidates = 0;
};

inline constexpr const char* kCorrUPrefix = "corr.u";
inline constexpr const char* kCorrGPrefix = "corr.g";

inline void init_correlation(ad::ParamStore& store, const CorrelationConfig& cfg, Rng& rng) {
  ad::init_mlp(store, cfg.mlp_u, kCorrUPrefix, rng);
  ad::init_mlp(store, cfg.mlp_g, kCorrGPrefix, rng);
}

// Per-point descriptors on both sides of the pairing. The pair descriptors
// are u = feature_unlabeled[i] - feature_labeled[n] and
// g = geometry_unlabeled[i] - geometry_labeled[n].
struct PairInputs {
  Var feature_unlabeled;   // U x 2d, rows (x_i || x_w,i)
  Var feature_labeled;     // L x 2d
  Var geometry_unlabeled;  // U x 6, rows (p_i || p_w,i)
  Var geometry_labeled;    // L x 6
};

// Raw similarity a(i, n) = MLP_u(u) + MLP_g(g), shape U x L.
inline Var pair_scores(ad::Tape& tape, const PairInputs& in, const CorrelationConfig& cfg, ad::ParamStore& store) {
  if (cfg.mlp_u.output_width() != 1 || cfg.mlp_g.output_width() != 1) {
    throw DimensionError("pair_scores: both score MLPs must have output width 1");
  }
  if (in.feature_unlabeled.cols() != in.feature_labeled.cols() ||
      in.geometry_unlabeled.cols() != in.geometry_labeled.cols()) {
    throw DimensionError("pair_scores: unlabeled and labeled descriptor widths differ");
  }
  const std::size_t u = in.feature_unlabeled.rows();
  const std::size_t l = in.feature_labeled.rows();
  if (in.geometry_unlabeled.rows() != u || in.geometry_labeled.rows() != l) {
    throw DimensionError("pair_scores: feature and geometry row counts differ");
  }
  Var su = ad::forward_mlp_pairwise(tape, cfg.mlp_u, store, kCorrUPrefix, in.feature_unlabeled, in.feature_labeled);
  Var sg = ad::forward_mlp_pairwise(tape, cfg.mlp_g, store, kCorrGPrefix, in.geometry_unlabeled, in.geometry_labeled);
  return ad::reshape(ad::add(su, sg), ad::Shape{u, l});
}

// Additive mask restricting each row to its `k` nearest labeled points
// (0 inside, -inf outside).
inline ad::Tensor candidate_mask(const PointSet& unlabeled, const PointSet& labeled, std::size_t k) {
  ad::Tensor mask = ad::Tensor::matrix(unlabeled.size(), labeled.size(), -std::numeric_limits<double>::infinity());
  const NeighborList nn = knn(unlabeled, labeled, std::min(k, labeled.size()));
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    for (const auto& nb : nn[i]) mask(i, nb.index) = 0.0;
  }
  return mask;
}

inline Var normalize_rows(Var scores) {
  if (scores.cols() == 0) throw DimensionError("normalize_rows: no labeled columns");
  return ad::softmax_rows(scores);
}

inline CorrelationMatrix normalize_rows(const ad::Tensor& scores) {
  ad::Tape tape;
  return normalize_rows(tape.constant(scores)).value();
}

// Unlabeled flows as correlation-weighted sums of labeled flows, U x 3.
// Accumulated around the first labeled flow so identical labels are
// reproduced exactly.
inline Var propagate_labels(ad::Tape& tape, Var corr, const FlowField& label_flows) {
  if (corr.cols() != label_flows.size()) {
    throw DimensionError("propagate_labels: " + std::to_string(corr.cols()) + " columns for " +
                         std::to_string(label_flows.size()) + " labels");
  }
  const Vec3 anchor = label_flows.front();
  ad::Tensor offsets = ad::Tensor::matrix(label_flows.size(), 3);
  for (std::size_t n = 0; n < label_flows.size(); ++n) {
    for (int c = 0; c < 3; ++c) offsets(n, c) = label_flows[n][c] - anchor[c];
  }
  ad::Tensor anchor_row(ad::Shape{3}, std::vector<double>{anchor[0], anchor[1], anchor[2]});
  return ad::add_row(ad::matmul(corr, tape.constant(std::move(offsets))), tape.constant(std::move(anchor_row)));
}

inline FlowField propagate_labels(const CorrelationMatrix& corr, const LabelSet& labels) {
  ad::Tape tape;
  return to_flow(propagate_labels(tape, tape.constant(corr), labels.flows).value());
}

}  // namespace ssflow
