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
#include <string>
#include <vector>

#include "ssflow/correlation.hpp"
#include "ssflow/diffcore.hpp"
#include "ssflow/encoder.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/pipeline/config.hpp"
#include "ssflow/pipeline/scene.hpp"

namespace ssflow {

// Raw xyz is the only per-point input channel.
inline constexpr std::size_t kPointFeatureWidth = 3;

// Both encoder stacks and both score MLPs are always allocated, so one
// checkpoint serves every ablation setting.
inline ad::ParamStore init_params(const PipelineConfig& cfg) {
  cfg.validate();
  ad::ParamStore store;
  Rng rng = make_rng(cfg.seed, "init");
  init_encoder(store, cfg.encoder_config(), kPointFeatureWidth, rng);
  init_correlation(store, cfg.correlation_config(), rng);
  return store;
}

// Loads checkpoint values into a model shaped by `cfg`; throws
// ArtifactMismatch when names or shapes disagree.
inline ad::ParamStore params_for(const PipelineConfig& cfg, const ad::ParamStore& checkpoint) {
  ad::ParamStore store = init_params(cfg);
  ad::assign_values(store, checkpoint);
  return store;
}

// Centering plus a uniform scale that fits the joint bounding box of both
// frames into a cube of side `extent`.
struct SceneFrame {
  Vec3 center{0, 0, 0};
  double scale = 1.0;

  Vec3 to_frame(const Vec3& p) const { return scale * (p - center); }
  Vec3 flow_to_frame(const Vec3& f) const { return scale * f; }
  Vec3 flow_from_frame(const Vec3& f) const { return (1.0 / scale) * f; }
};

inline SceneFrame fit_frame(const PointSet& p, const PointSet& q, double extent) {
  Vec3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  for (const PointSet* s : {&p, &q}) {
    for (const auto& x : s->coords) {
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], x[c]);
        hi[c] = std::max(hi[c], x[c]);
      }
    }
  }
  SceneFrame f;
  f.center = 0.5 * (lo + hi);
  const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (span > 0.0 && std::isfinite(span)) f.scale = extent / span;
  return f;
}

// A scene in its normalized frame, with the pieces of the
// forward pass that do not depend on parameters.
struct PreparedScene {
  SceneFrame frame;
  PointSet p, q;
  LabelSet labels;               // flows in frame units
  std::vector<std::size_t> unlabeled;
  FlowField coarse;              // frame units
  EncoderGraphs graphs;          // empty without the correlation stage
  Tensor geometry;               // n x 6: p || p + coarse
};

inline PreparedScene prepare_scene(const ScenePair& scene, const PipelineConfig& cfg) {
  scene.validate();
  if (!scene.labels) throw ContractError("scene " + scene.id + " has no labels");
  PreparedScene s;
  s.frame = fit_frame(scene.p, scene.q, cfg.normalize_extent);
  s.p.coords.reserve(scene.p.size());
  s.q.coords.reserve(scene.q.size());
  for (const auto& x : scene.p.coords) s.p.coords.push_back(s.frame.to_frame(x));
  for (const auto& x : scene.q.coords) s.q.coords.push_back(s.frame.to_frame(x));
  s.labels.indices = scene.labels->indices;
  for (const auto& f : scene.labels->flows) s.labels.flows.push_back(s.frame.flow_to_frame(f));
  s.unlabeled = unlabeled_indices(s.p.size(), s.labels);
  s.coarse = coarse_upsample(s.p, s.labels, std::min(cfg.knn_k, s.labels.size()));
  if (cfg.use_correlation) {
    s.graphs = build_encoder_graphs(s.p, s.q, s.coarse, cfg.encoder_config());
    s.geometry = Tensor::matrix(s.p.size(), 6);
    for (std::size_t i = 0; i < s.p.size(); ++i) {
      for (int c = 0; c < 3; ++c) {
        s.geometry(i, c) = s.p[i][c];
        s.geometry(i, 3 + c) = s.p[i][c] + s.coarse[i][c];
      }
    }
  }
  return s;
}

// Full pseudo-label field (frame units, n x 3) recorded on `tape`; labeled
// rows are the label flows themselves.
inline Var forward_pseudo_labels(ad::Tape& tape, const PreparedScene& s, const PipelineConfig& cfg,
                                 ad::ParamStore& store) {
  const std::size_t n = s.p.size();
  if (!cfg.use_correlation) return tape.constant(to_tensor(s.coarse));

  if (s.geometry.rows() != n) throw ContractError("scene was prepared without the correlation stage");
  const EncodedFrames enc = encode_frames(tape, s.graphs, cfg.encoder_config(), store);
  Var features = ad::concat_cols({enc.x, enc.x_w});
  Var geo = tape.constant(s.geometry);

  PairInputs pairs;
  pairs.feature_unlabeled = ad::gather_rows(features, s.unlabeled);
  pairs.feature_labeled = ad::gather_rows(features, s.labels.indices);
  pairs.geometry_unlabeled = ad::gather_rows(geo, s.unlabeled);
  pairs.geometry_labeled = ad::gather_rows(geo, s.labels.indices);

  const CorrelationConfig corr_cfg = cfg.correlation_config();
  Var scores = pair_scores(tape, pairs, corr_cfg, store);
  if (corr_cfg.label_candidates > 0) {
    const PointSet warped = warp(s.p, s.coarse);
    scores = ad::add(scores, tape.constant(candidate_mask(warped.subset(s.unlabeled),
                                                          warped.subset(s.labels.indices),
                                                          corr_cfg.label_candidates)));
  }
  Var corr = normalize_rows(scores);
  Var unlabeled_flow = propagate_labels(tape, corr, s.labels.flows);

  // Rows [0, U) are unlabeled, [U, n) labeled; scatter back to point order.
  Var stacked = ad::concat_rows({unlabeled_flow, tape.constant(to_tensor(s.labels.flows))});
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < s.unlabeled.size(); ++k) order[s.unlabeled[k]] = k;
  for (std::size_t k = 0; k < s.labels.size(); ++k) order[s.labels.indices[k]] = s.unlabeled.size() + k;
  return ad::gather_rows(stacked, order);
}

// F = g(P, Q, F_labeled) in the scene's original units. Labeled entries are
// the labels, bit for bit. Without the correlation stage the coarse
// up-sampled flow is returned.
inline FlowField generate_pseudo_labels(const ScenePair& scene, const ad::ParamStore& params,
                                        const PipelineConfig& cfg) {
  scene.validate();
  if (!scene.labels) throw ContractError("scene " + scene.id + " has no labels");
  if (!cfg.use_correlation) {
    return coarse_upsample(scene.p, *scene.labels, std::min(cfg.knn_k, scene.labels->size()));
  }
  const PreparedScene s = prepare_scene(scene, cfg);
  ad::Tape tape;
  auto& store = const_cast<ad::ParamStore&>(params);  // forward only, no backward
  const Tensor field = forward_pseudo_labels(tape, s, cfg, store).value();
  FlowField out(scene.p.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = s.frame.flow_from_frame({field(i, 0), field(i, 1), field(i, 2)});
  }
  for (std::size_t k = 0; k < scene.labels->size(); ++k) out[scene.labels->indices[k]] = scene.labels->flows[k];
  return out;
}

}  // namespace ssflow
