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

#include "ssflow/diffcore.hpp"
#include "ssflow/flowinit.hpp"
#include "ssflow/geometry.hpp"

namespace ssflow {

// n x d per-point features.
using FeatureSet = Tensor;

// Radius graph from a set of center points to a neighbor cloud. Edges are
// grouped by center: edges offsets[c] .. offsets[c+1] belong to center c.
// Each edge carries (center - neighbor || feature_center || feature_neighbor).
struct EdgeSet {
  PointSet centers;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> center_index;
  std::vector<std::size_t> neighbor_index;
  Tensor features;
  Tensor center_features;     // per center point
  Tensor neighbor_features;   // per neighbor point
  std::size_t point_feature_width = 0;
  bool truncated = false;

  std::size_t center_count() const { return centers.size(); }
  std::size_t edge_count() const { return neighbor_index.size(); }
  std::size_t feature_width() const { return 3 + 2 * point_feature_width; }
};

inline EdgeSet build_edges(const PointSet& centers, const PointSet& neighbors, const Tensor& center_features,
                           const Tensor& neighbor_features, double r, std::size_t max_neighbors = 64) {
  if (center_features.rows() != centers.size() || neighbor_features.rows() != neighbors.size()) {
    throw DimensionError("build_edges: feature rows do not match point counts");
  }
  if (center_features.cols() != neighbor_features.cols()) {
    throw DimensionError("build_edges: center and neighbor feature widths differ");
  }
  SearchOptions opts;
  opts.max_neighbors = max_neighbors;
  const NeighborList nbrs = radius_neighbors(centers, neighbors, r, opts);

  EdgeSet e;
  e.centers = centers;
  e.point_feature_width = center_features.cols();
  e.center_features = center_features;
  e.neighbor_features = neighbor_features;
  e.truncated = nbrs.truncated;
  e.offsets.push_back(0);
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (const auto& nb : nbrs[c]) {
      e.center_index.push_back(c);
      e.neighbor_index.push_back(nb.index);
    }
    e.offsets.push_back(e.neighbor_index.size());
  }
  const std::size_t d = e.point_feature_width;
  const std::size_t w = e.feature_width();
  e.features = Tensor::matrix(e.edge_count(), w);
  for (std::size_t k = 0; k < e.edge_count(); ++k) {
    const std::size_t i = e.center_index[k];
    const std::size_t j = e.neighbor_index[k];
    double* row = e.features.data.data() + k * w;
    const Vec3 delta = centers[i] - neighbors[j];
    for (int c = 0; c < 3; ++c) row[c] = delta[c];
    for (std::size_t c = 0; c < d; ++c) {
      row[3 + c] = center_features(i, c);
      row[3 + d + c] = neighbor_features(j, c);
    }
  }
  return e;
}

// Intra-frame graph E over P: every pair closer than r (strict), including
// the zero-length self edge.
inline EdgeSet build_intra_edges(const PointSet& points, const Tensor& point_features, double r,
                                 std::size_t max_neighbors = 64) {
  return build_edges(points, points, point_features, point_features, r, max_neighbors);
}

inline PointSet warp(const PointSet& points, const FlowField& flow) {
  if (flow.size() != points.size()) {
    throw DimensionError("warp: " + std::to_string(flow.size()) + " flows for " + std::to_string(points.size()) +
                         " points");
  }
  PointSet out = points;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = points[i] + flow[i];
  return out;
}

// Spatial-memory graph E': P warped by the coarse flow, linked to the Q
// points within r.
inline EdgeSet build_memory_edges(const PointSet& p, const FlowField& coarse, const PointSet& q,
                                  const Tensor& features_p, const Tensor& features_q, double r,
                                  std::size_t max_neighbors = 64) {
  return build_edges(warp(p, coarse), q, features_p, features_q, r, max_neighbors);
}

// Stacked set-convolution stages. Stage s keeps ceil(n * prod(ratios[0..s]))
// points chosen by farthest point sampling, aggregates its radius-radii[s]
// neighborhood with a shared per-edge layer and max pooling, then copies the
// pooled feature back to every point from its nearest kept point.
struct SetconvSpec {
  std::vector<std::size_t> widths{16, 32, 32};
  std::vector<double> radii{0.25, 0.5, 1.0};
  std::vector<double> ratios{1.0, 0.5, 0.5};
  std::size_t max_neighbors = 64;
  ad::Activation activation = ad::Activation::kLeakyRelu;

  std::size_t stages() const { return widths.size(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (widths.empty()) throw DimensionError("setconv: at least one stage required");
    if (radii.size() != widths.size() || ratios.size() != widths.size()) {
      throw DimensionError("setconv: widths, radii and ratios must have one entry per stage");
    }
    for (std::size_t s = 0; s < widths.size(); ++s) {
      if (widths[s] == 0 || !(radii[s] > 0.0) || !(ratios[s] > 0.0 && ratios[s] <= 1.0)) {
        throw DimensionError("setconv: stage " + std::to_string(s) + " has a non-positive width/radius or a ratio "
                             "outside (0, 1]");
      }
    }
  }

  // Points kept at each stage for a cloud of n points.
  std::vector<std::size_t> kept_counts(std::size_t n) const {
    std::vector<std::size_t> out;
    double cumulative = 1.0;
    for (double r : ratios) {
      cumulative *= r;
      const auto m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * cumulative - 1e-9));
      out.push_back(std::max<std::size_t>(1, std::min(m, n)));
    }
    return out;
  }
};

inline std::string setconv_weight_name(const std::string& prefix, std::size_t stage) {
  return prefix + ".s" + std::to_string(stage) + ".weight";
}
inline std::string setconv_bias_name(const std::string& prefix, std::size_t stage) {
  return prefix + ".s" + std::to_string(stage) + ".bias";
}

inline void init_setconv(ad::ParamStore& store, const SetconvSpec& spec, std::size_t point_feature_width,
                         const std::string& prefix, Rng& rng) {
  spec.validate();
  std::size_t in = 3 + 2 * point_feature_width;
  for (std::size_t s = 0; s < spec.stages(); ++s) {
    store.add(setconv_weight_name(prefix, s), ad::glorot_uniform(spec.widths[s], in, rng));
    store.add(setconv_bias_name(prefix, s), Tensor(ad::Shape{spec.widths[s]}));
    in = 3 + 2 * spec.widths[s];
  }
}

// Parameter-free structure of an encoder pass: sampled centers, stage
// graphs and the copy-back maps. Depends on positions only.
struct SetconvStagePlan {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> center_index;
  std::vector<std::size_t> neighbor_index;
  Tensor delta;                      // center - neighbor per edge
  std::vector<std::size_t> spread;   // per point, row of the pooled output
};

struct SetconvPlan {
  std::size_t points = 0;
  std::size_t edges = 0;                   // first-stage edge count
  std::vector<std::size_t> offsets;        // first-stage grouping
  std::vector<std::size_t> center_index;   // first-stage edges
  std::vector<std::size_t> neighbor_index;
  Tensor delta;                            // first-stage center - neighbor
  std::vector<std::size_t> first_spread;   // empty when every point is kept
  std::vector<SetconvStagePlan> stages;    // stages 1..S-1
  Tensor empty_mask;                       // n x width, empty when unused
};

namespace detail {

inline void check_stage_weight(const ad::ParamStore& store, const SetconvSpec& spec, const std::string& prefix,
                               std::size_t stage, std::size_t in_width) {
  const auto& w = store.at(setconv_weight_name(prefix, stage)).value;
  if (w.rows() != spec.widths[stage] || w.cols() != in_width) {
    throw DimensionError("setconv '" + prefix + "' stage " + std::to_string(stage) + ": weight " +
                         ad::shape_string(w.shape) + " does not fit edge width " + std::to_string(in_width) +
                         " -> " + std::to_string(spec.widths[stage]));
  }
}

// For every point, the slot of its nearest kept point.
inline std::vector<std::size_t> nearest_kept(const PointSet& positions, const std::vector<std::size_t>& kept) {
  const NeighborList nn = knn(positions, positions.subset(kept), 1);
  std::vector<std::size_t> slot(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) slot[i] = nn[i].front().index;
  return slot;
}

}  // namespace detail

inline SetconvPlan make_setconv_plan(const EdgeSet& edges, const SetconvSpec& spec) {
  spec.validate();
  const PointSet& positions = edges.centers;
  const std::size_t n = positions.size();
  if (n == 0) throw DimensionError("encode: empty point set");
  SetconvPlan plan;
  plan.points = n;
  plan.edges = edges.edge_count();
  plan.offsets = edges.offsets;
  plan.center_index = edges.center_index;
  plan.neighbor_index = edges.neighbor_index;
  plan.delta = Tensor::matrix(edges.edge_count(), 3);
  for (std::size_t k = 0; k < edges.edge_count(); ++k) {
    for (std::size_t c = 0; c < 3; ++c) plan.delta(k, c) = edges.features(k, c);
  }

  const auto kept = spec.kept_counts(n);
  std::vector<std::size_t> fps;
  std::size_t need = 0;
  for (std::size_t m : kept) {
    if (m < n) need = std::max(need, m);
  }
  if (need > 0) fps = farthest_point_sample(positions, need, lexicographic_min_index(positions));
  auto keep_of = [&](std::size_t m) {
    std::vector<std::size_t> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = m < n ? fps[i] : i;
    return out;
  };

  if (kept[0] < n) {
    const auto keep = keep_of(kept[0]);
    const auto slot = detail::nearest_kept(positions, keep);
    plan.first_spread.resize(n);
    for (std::size_t i = 0; i < n; ++i) plan.first_spread[i] = keep[slot[i]];
  }

  SearchOptions opts;
  opts.max_neighbors = spec.max_neighbors;
  for (std::size_t s = 1; s < spec.stages(); ++s) {
    const auto keep = keep_of(kept[s]);
    const NeighborList nbrs = radius_neighbors(positions.subset(keep), positions, spec.radii[s], opts);
    SetconvStagePlan st;
    st.offsets.push_back(0);
    for (std::size_t c = 0; c < keep.size(); ++c) {
      for (const auto& nb : nbrs[c]) {
        st.center_index.push_back(keep[c]);
        st.neighbor_index.push_back(nb.index);
      }
      st.offsets.push_back(st.neighbor_index.size());
    }
    st.delta = Tensor::matrix(st.neighbor_index.size(), 3);
    for (std::size_t k = 0; k < st.neighbor_index.size(); ++k) {
      const Vec3 d = positions[st.center_index[k]] - positions[st.neighbor_index[k]];
      for (int c = 0; c < 3; ++c) st.delta(k, c) = d[c];
    }
    if (keep.size() < n) st.spread = detail::nearest_kept(positions, keep);
    plan.stages.push_back(std::move(st));
  }

  bool any_empty = false;
  Tensor mask = Tensor::matrix(n, spec.output_width(), 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (edges.offsets[i] == edges.offsets[i + 1]) {
      any_empty = true;
      for (std::size_t c = 0; c < spec.output_width(); ++c) mask(i, c) = 0.0;
    }
  }
  if (any_empty) plan.empty_mask = std::move(mask);
  return plan;
}

namespace detail {

// One stage: W [delta | f_i | f_j] + bias, activated and max-pooled per
// center. The point-wise parts W_a f and W_b f are formed once per point.
inline Var setconv_stage(ad::Tape& tape, ad::ParamStore& store, const SetconvSpec& spec, const std::string& prefix,
                         std::size_t stage, Var delta, Var center_feat, Var neighbor_feat,
                         const std::vector<std::size_t>& center, const std::vector<std::size_t>& neighbor,
                         const std::vector<std::size_t>& offsets) {
  const std::size_t d = center_feat.cols();
  if (neighbor_feat.cols() != d) throw DimensionError("encode: center and neighbor feature widths differ");
  check_stage_weight(store, spec, prefix, stage, 3 + 2 * d);
  Var w = tape.parameter(store, setconv_weight_name(prefix, stage));
  return ad::edge_max_pool(ad::linear(center_feat, ad::slice_cols(w, 3, 3 + d)),
                           ad::linear(neighbor_feat, ad::slice_cols(w, 3 + d, 3 + 2 * d)), delta,
                           ad::slice_cols(w, 0, 3), tape.parameter(store, setconv_bias_name(prefix, stage)), center,
                           neighbor, offsets, spec.activation);
}

}  // namespace detail

// Encodes a graph into one feature row per center point. `delta` holds the
// first-stage center - neighbor offsets; the point features index into the
// graph's centers and neighbors. Points whose first-stage edge list is empty
// get a zero row.
inline Var encode(ad::Tape& tape, const SetconvPlan& plan, Var delta, Var center_feat, Var neighbor_feat,
                  const SetconvSpec& spec, ad::ParamStore& store, const std::string& prefix) {
  spec.validate();
  if (delta.rows() != plan.edges || delta.cols() != 3) {
    throw DimensionError("encode: delta is " + ad::shape_string(delta.value().shape) + " for " +
                         std::to_string(plan.edges) + " edges");
  }
  if (center_feat.rows() != plan.points) {
    throw DimensionError("encode: " + std::to_string(center_feat.rows()) + " center feature rows for " +
                         std::to_string(plan.points) + " centers");
  }
  if (plan.stages.size() + 1 != spec.stages()) throw DimensionError("encode: plan built for another stage count");

  Var h = detail::setconv_stage(tape, store, spec, prefix, 0, delta, center_feat, neighbor_feat, plan.center_index,
                                plan.neighbor_index, plan.offsets);
  if (!plan.first_spread.empty()) h = ad::gather_rows(h, plan.first_spread);
  for (std::size_t s = 1; s < spec.stages(); ++s) {
    const SetconvStagePlan& st = plan.stages[s - 1];
    Var pooled = detail::setconv_stage(tape, store, spec, prefix, s, tape.constant(st.delta), h, h, st.center_index,
                                       st.neighbor_index, st.offsets);
    h = st.spread.empty() ? pooled : ad::gather_rows(pooled, st.spread);
  }
  return plan.empty_mask.data.empty() ? h : ad::mul(h, tape.constant(plan.empty_mask));
}

inline Var encode(ad::Tape& tape, const EdgeSet& edges, const SetconvPlan& plan, const SetconvSpec& spec,
                  ad::ParamStore& store, const std::string& prefix) {
  return encode(tape, plan, tape.constant(plan.delta), tape.constant(edges.center_features),
                tape.constant(edges.neighbor_features), spec, store, prefix);
}

inline FeatureSet encode(const EdgeSet& edges, const SetconvSpec& spec, const ad::ParamStore& store,
                         const std::string& prefix) {
  ad::Tape tape;
  auto& mutable_store = const_cast<ad::ParamStore&>(store);  // forward only
  return encode(tape, edges, make_setconv_plan(edges, spec), spec, mutable_store, prefix).value();
}

// Two-frame encoder configuration: one setconv stack over E, one over E'.
struct EncoderConfig {
  SetconvSpec setconv;
  bool use_memory = true;
};

inline constexpr const char* kIntraPrefix = "enc.intra";
inline constexpr const char* kMemoryPrefix = "enc.memory";

inline void init_encoder(ad::ParamStore& store, const EncoderConfig& cfg, std::size_t point_feature_width, Rng& rng) {
  init_setconv(store, cfg.setconv, point_feature_width, kIntraPrefix, rng);
  init_setconv(store, cfg.setconv, point_feature_width, kMemoryPrefix, rng);
}

struct EncodedFrames {
  Var x;    // current-frame features, n x d
  Var x_w;  // spatial-memory features, n x d (zeros when memory is off)
};

// Both graphs of a scene with their encoder plans.
struct EncoderGraphs {
  EdgeSet intra;
  SetconvPlan intra_plan;
  EdgeSet memory;          // unused when memory is off
  SetconvPlan memory_plan;
};

// E over P and E' (P warped by `coarse`, linked into Q). The raw coordinates
// serve as the per-point input features of both graphs.
inline EncoderGraphs build_encoder_graphs(const PointSet& p, const PointSet& q, const FlowField& coarse,
                                          const EncoderConfig& cfg) {
  const Tensor feat_p = to_tensor(p);
  const double r = cfg.setconv.radii.front();
  EncoderGraphs g;
  g.intra = build_intra_edges(p, feat_p, r, cfg.setconv.max_neighbors);
  g.intra_plan = make_setconv_plan(g.intra, cfg.setconv);
  if (cfg.use_memory) {
    g.memory = build_memory_edges(p, coarse, q, feat_p, to_tensor(q), r, cfg.setconv.max_neighbors);
    g.memory_plan = make_setconv_plan(g.memory, cfg.setconv);
  }
  return g;
}

inline EncodedFrames encode_frames(ad::Tape& tape, const EncoderGraphs& g, const EncoderConfig& cfg,
                                   ad::ParamStore& store) {
  EncodedFrames out;
  out.x = encode(tape, g.intra, g.intra_plan, cfg.setconv, store, kIntraPrefix);
  if (cfg.use_memory) {
    out.x_w = encode(tape, g.memory, g.memory_plan, cfg.setconv, store, kMemoryPrefix);
  } else {
    out.x_w = tape.constant(Tensor::matrix(g.intra.center_count(), cfg.setconv.output_width()));
  }
  return out;
}

inline EncodedFrames encode_frames(ad::Tape& tape, const PointSet& p, const PointSet& q, const FlowField& coarse,
                                   const EncoderConfig& cfg, ad::ParamStore& store) {
  return encode_frames(tape, build_encoder_graphs(p, q, coarse, cfg), cfg, store);
}

}  // namespace ssflow
