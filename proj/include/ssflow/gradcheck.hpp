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
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "ssflow/correlation.hpp"
#include "ssflow/diffcore.hpp"
#include "ssflow/encoder.hpp"
#include "ssflow/objectives.hpp"
#include "ssflow/pipeline/synthetic.hpp"
#include "ssflow/pipeline/train.hpp"

namespace ssflow {

// Finite-difference verification of the reverse-mode gradients. Each case
// reads its differentiable inputs from a ParamStore through
// Tape::parameter and returns a scalar; tensor-valued ops are reduced with a
// fixed random weighting first.
struct GradcheckCase {
  std::string name;
  ad::ParamStore inputs;
  std::function<Var(ad::Tape&, ad::ParamStore&)> fn;
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: the analytic gradient of the named case (or of every case for
  // "*") is scaled by 1.01 before the comparison.
  std::string corrupt;
};

struct GradcheckResult {
  std::string name;
  std::size_t inputs = 0;
  double rel_error = 0.0;
  bool passed = false;
};

// ||analytic - numeric|| / max(||analytic||, ||numeric||); 0 when both
// vanish.
inline double gradient_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom < 1e-300) return std::sqrt(diff) == 0.0 ? 0.0 : INFINITY;
  return std::sqrt(diff) / denom;
}

inline GradcheckResult run_gradcheck_case(GradcheckCase& c, const GradcheckOptions& opt) {
  auto eval = [&] {
    ad::Tape tape;
    return c.fn(tape, c.inputs).value().item();
  };
  c.inputs.zero_grads();
  {
    ad::Tape tape;
    tape.backward(c.fn(tape, c.inputs));
  }
  std::vector<double> analytic, numeric;
  for (auto& e : c.inputs.entries()) {
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      analytic.push_back(e.grad.data[k]);
      const double x = e.value.data[k];
      e.value.data[k] = x + opt.step;
      const double plus = eval();
      e.value.data[k] = x - opt.step;
      const double minus = eval();
      e.value.data[k] = x;
      numeric.push_back((plus - minus) / (2.0 * opt.step));
    }
  }
  if (opt.corrupt == "*" || opt.corrupt == c.name) {
    for (double& g : analytic) g *= 1.01;
  }
  GradcheckResult r;
  r.name = c.name;
  r.inputs = analytic.size();
  r.rel_error = gradient_rel_error(analytic, numeric);
  r.passed = r.rel_error < opt.tolerance;
  return r;
}

namespace detail {

inline Tensor random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = uniform(rng, lo, hi);
  return t;
}

// Uniform values whose magnitudes stay at least `gap` away from zero.
inline Tensor away_from_zero(Rng& rng, ad::Shape shape, double gap = 0.05) {
  Tensor t(std::move(shape));
  for (double& v : t.data) {
    const double m = uniform(rng, gap, 1.0);
    v = uniform01(rng) < 0.5 ? -m : m;
  }
  return t;
}

// sum(out * weights) with weights drawn once per case.
inline Var reduce(Var out, const Tensor& weights) {
  return ad::weighted_sum(out, weights);
}

// Zero-initialized biases put structurally zero pre-activations (an empty
// neighborhood's self edge) exactly on an activation kink.
inline void randomize_biases(ad::ParamStore& store, Rng& rng) {
  for (auto& e : store.entries()) {
    if (e.name.size() >= 5 && e.name.compare(e.name.size() - 5, 5, ".bias") == 0) {
      e.value = random_tensor(rng, e.value.shape, -0.3, 0.3);
    }
  }
}

inline PointSet random_points(Rng& rng, std::size_t n, double extent) {
  PointSet p;
  for (std::size_t i = 0; i < n; ++i) {
    p.coords.push_back({uniform(rng, 0.0, extent), uniform(rng, 0.0, extent), uniform(rng, 0.0, extent)});
  }
  return p;
}

}  // namespace detail

// The full list: every differentiable op, the MLPs, the encoder, the
// correlation stage, each loss, and the training objective with respect to
// all network parameters.
inline std::vector<GradcheckCase> gradcheck_cases(std::uint64_t seed) {
  using ad::Shape;
  using detail::away_from_zero;
  using detail::random_tensor;
  using detail::reduce;
  Rng rng = make_rng(seed, "gradcheck");
  std::vector<GradcheckCase> cases;

  auto unary = [&](const std::string& name, Tensor a, std::function<Var(Var)> op, Shape out_shape) {
    GradcheckCase c;
    c.name = name;
    c.inputs.add("a", std::move(a));
    const Tensor w = random_tensor(rng, std::move(out_shape));
    c.fn = [op, w](ad::Tape& t, ad::ParamStore& s) { return reduce(op(t.parameter(s, "a")), w); };
    cases.push_back(std::move(c));
  };
  auto binary = [&](const std::string& name, Tensor a, Tensor b, std::function<Var(Var, Var)> op, Shape out_shape) {
    GradcheckCase c;
    c.name = name;
    c.inputs.add("a", std::move(a));
    c.inputs.add("b", std::move(b));
    const Tensor w = random_tensor(rng, std::move(out_shape));
    c.fn = [op, w](ad::Tape& t, ad::ParamStore& s) {
      return reduce(op(t.parameter(s, "a"), t.parameter(s, "b")), w);
    };
    cases.push_back(std::move(c));
  };

  binary("add", random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3}), ad::add, {4, 3});
  binary("sub", random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3}), ad::sub, {4, 3});
  binary("mul", random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3}), ad::mul, {4, 3});
  unary("scale", random_tensor(rng, {4, 3}), [](Var a) { return ad::scale(a, -1.7); }, {4, 3});
  binary("add_row", random_tensor(rng, {5, 3}), random_tensor(rng, {3}), ad::add_row, {5, 3});
  binary("matmul", random_tensor(rng, {4, 3}), random_tensor(rng, {3, 5}), ad::matmul, {4, 5});
  binary("linear", random_tensor(rng, {4, 3}), random_tensor(rng, {5, 3}),
         [](Var x, Var w) { return ad::linear(x, w); }, {4, 5});
  unary("leaky_relu", away_from_zero(rng, {6, 4}),
        [](Var a) { return ad::activate(a, ad::Activation::kLeakyRelu); }, {6, 4});
  unary("relu", away_from_zero(rng, {6, 4}), [](Var a) { return ad::activate(a, ad::Activation::kRelu); }, {6, 4});
  unary("tanh", random_tensor(rng, {6, 4}), [](Var a) { return ad::activate(a, ad::Activation::kTanh); }, {6, 4});
  unary("gather_rows", random_tensor(rng, {4, 3}),
        [](Var a) { return ad::gather_rows(a, {2, 0, 2, 3, 1, 2}); }, {6, 3});
  binary("concat_cols", random_tensor(rng, {4, 2}), random_tensor(rng, {4, 3}),
         [](Var a, Var b) { return ad::concat_cols({a, b}); }, {4, 5});
  binary("concat_rows", random_tensor(rng, {2, 3}), random_tensor(rng, {4, 3}),
         [](Var a, Var b) { return ad::concat_rows({a, b}); }, {6, 3});
  unary("slice_cols", random_tensor(rng, {4, 6}), [](Var a) { return ad::slice_cols(a, 1, 4); }, {4, 3});
  // Distinct values keep every maximum unique; segment 2 is empty.
  {
    Tensor a = Tensor::matrix(7, 3);
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = 0.1 * static_cast<double>((i * 8) % 21) - 1.0;
    unary("segment_max", std::move(a), [](Var x) { return ad::segment_max(x, {0, 3, 5, 5, 7}); }, {4, 3});
  }
  binary("pair_diff", random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4}), ad::pair_diff, {15, 4});
  for (auto act : {ad::Activation::kLeakyRelu, ad::Activation::kTanh}) {
    GradcheckCase c;
    c.name = act == ad::Activation::kTanh ? "pair_diff_activate_tanh" : "pair_diff_activate_leaky";
    c.inputs.add("a", random_tensor(rng, {3, 4}));
    c.inputs.add("b", random_tensor(rng, {5, 4}));
    c.inputs.add("bias", random_tensor(rng, {4}));
    const Tensor w = random_tensor(rng, {15, 4});
    c.fn = [w, act](ad::Tape& t, ad::ParamStore& s) {
      return reduce(ad::pair_diff_activate(t.parameter(s, "a"), t.parameter(s, "b"), t.parameter(s, "bias"), act), w);
    };
    cases.push_back(std::move(c));
  }
  {
    GradcheckCase c;
    c.name = "edge_max_pool";
    c.inputs.add("a", random_tensor(rng, {3, 4}));
    c.inputs.add("b", random_tensor(rng, {5, 4}));
    c.inputs.add("delta", random_tensor(rng, {8, 3}));
    c.inputs.add("wp", random_tensor(rng, {4, 3}));
    c.inputs.add("bias", random_tensor(rng, {4}));
    const Tensor w = random_tensor(rng, {4, 4});
    c.fn = [w](ad::Tape& t, ad::ParamStore& s) {
      return reduce(ad::edge_max_pool(t.parameter(s, "a"), t.parameter(s, "b"), t.parameter(s, "delta"),
                                      t.parameter(s, "wp"), t.parameter(s, "bias"), {0, 0, 0, 1, 1, 2, 2, 2},
                                      {0, 1, 4, 2, 3, 0, 3, 4}, {0, 3, 5, 5, 8}, ad::Activation::kLeakyRelu),
                    w);
    };
    cases.push_back(std::move(c));
  }
  unary("reshape", random_tensor(rng, {4, 3}), [](Var a) { return ad::reshape(a, Shape{2, 6}); }, {2, 6});
  {
    // One masked entry per row exercises the -inf path.
    Tensor mask = Tensor::matrix(4, 5);
    for (std::size_t r = 0; r < 4; ++r) mask(r, r) = -INFINITY;
    unary("softmax_rows", random_tensor(rng, {4, 5}, -2.0, 2.0),
          [mask](Var a) { return ad::softmax_rows(ad::add(a, a.tape->constant(mask))); }, {4, 5});
  }
  unary("sum", random_tensor(rng, {4, 3}), [](Var a) { return ad::sum(a); }, {});
  unary("sum_squares", random_tensor(rng, {4, 3}), [](Var a) { return ad::sum_squares(a); }, {});
  unary("row_norms", away_from_zero(rng, {5, 3}), [](Var a) { return ad::row_norms(a); }, {5, 1});

  // MLPs.
  {
    GradcheckCase c;
    c.name = "mlp";
    const auto spec = ad::MlpSpec::make({4, 6, 5, 2});
    ad::init_mlp(c.inputs, spec, "m", rng);
    detail::randomize_biases(c.inputs, rng);
    const Tensor x = random_tensor(rng, {7, 4});
    const Tensor w = random_tensor(rng, {7, 2});
    c.fn = [spec, x, w](ad::Tape& t, ad::ParamStore& s) {
      return reduce(ad::forward_mlp(t, spec, s, "m", t.constant(x)), w);
    };
    cases.push_back(std::move(c));
  }
  {
    GradcheckCase c;
    c.name = "mlp_pairwise";
    const auto spec = ad::MlpSpec::make({3, 8, 1});
    ad::init_mlp(c.inputs, spec, "m", rng);
    c.inputs.add("x", random_tensor(rng, {4, 3}));
    c.inputs.add("y", random_tensor(rng, {3, 3}));
    const Tensor w = random_tensor(rng, {12, 1});
    c.fn = [spec, w](ad::Tape& t, ad::ParamStore& s) {
      return reduce(ad::forward_mlp_pairwise(t, spec, s, "m", t.parameter(s, "x"), t.parameter(s, "y")), w);
    };
    cases.push_back(std::move(c));
  }

  // Encoder on a small cloud, with respect to its weights and, through the
  // warp of E', to the coarse flow.
  SetconvSpec small_spec;
  small_spec.widths = {5, 6, 4};
  small_spec.radii = {0.6, 0.9, 1.5};
  const PointSet p = detail::random_points(rng, 24, 1.5);
  const PointSet q = detail::random_points(rng, 20, 1.5);
  {
    GradcheckCase c;
    c.name = "encode";
    init_setconv(c.inputs, small_spec, 3, "enc", rng);
    detail::randomize_biases(c.inputs, rng);
    const EdgeSet edges = build_intra_edges(p, to_tensor(p), small_spec.radii[0]);
    const SetconvPlan plan = make_setconv_plan(edges, small_spec);
    const Tensor w = random_tensor(rng, {p.size(), small_spec.output_width()});
    c.fn = [small_spec, edges, plan, w](ad::Tape& t, ad::ParamStore& s) {
      return reduce(encode(t, edges, plan, small_spec, s, "enc"), w);
    };
    cases.push_back(std::move(c));
  }
  {
    GradcheckCase c;
    c.name = "encode_memory_warp";
    init_setconv(c.inputs, small_spec, 3, "enc", rng);
    detail::randomize_biases(c.inputs, rng);
    FlowField coarse;
    for (std::size_t i = 0; i < p.size(); ++i) coarse.push_back({uniform(rng, -.2, .2), uniform(rng, -.2, .2), 0.0});
    c.inputs.add("coarse", to_tensor(coarse));
    const EdgeSet edges = build_memory_edges(p, coarse, q, to_tensor(p), to_tensor(q), small_spec.radii[0]);
    const SetconvPlan plan = make_setconv_plan(edges, small_spec);
    const Tensor pt = to_tensor(p), qt = to_tensor(q);
    const Tensor w = random_tensor(rng, {p.size(), small_spec.output_width()});
    c.fn = [small_spec, edges, plan, pt, qt, w](ad::Tape& t, ad::ParamStore& s) {
      Var warped = ad::add(t.constant(pt), t.parameter(s, "coarse"));
      Var delta = ad::sub(ad::gather_rows(warped, edges.center_index),
                          ad::gather_rows(t.constant(qt), edges.neighbor_index));
      return reduce(encode(t, plan, delta, t.constant(pt), t.constant(qt), small_spec, s, "enc"), w);
    };
    cases.push_back(std::move(c));
  }

  // Correlation stage: scores, softmax and label propagation.
  {
    GradcheckCase c;
    c.name = "correlation";
    CorrelationConfig cc;
    cc.mlp_u = ad::MlpSpec::make({4, 6, 1});
    cc.mlp_g = ad::MlpSpec::make({6, 5, 1});
    init_correlation(c.inputs, cc, rng);
    detail::randomize_biases(c.inputs, rng);
    c.inputs.add("fu", random_tensor(rng, {5, 4}));
    c.inputs.add("fl", random_tensor(rng, {3, 4}));
    const Tensor gu = random_tensor(rng, {5, 6}), gl = random_tensor(rng, {3, 6});
    FlowField flows;
    for (int n = 0; n < 3; ++n) flows.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
    const Tensor w = random_tensor(rng, {5, 3});
    c.fn = [cc, gu, gl, flows, w](ad::Tape& t, ad::ParamStore& s) {
      PairInputs in{t.parameter(s, "fu"), t.parameter(s, "fl"), t.constant(gu), t.constant(gl)};
      return reduce(propagate_labels(t, normalize_rows(pair_scores(t, in, cc, s)), flows), w);
    };
    cases.push_back(std::move(c));
  }

  // Losses with respect to the flow field.
  LabelSet labels;
  labels.indices = {1, 4, 9, 15};
  for (std::size_t k = 0; k < labels.indices.size(); ++k) labels.flows.push_back({0.1, 0.0, -0.1});
  LossWeights weights;
  weights.r_smooth = 0.7;
  {
    GradcheckCase c;
    c.name = "chamfer";
    c.inputs.add("warped", to_tensor(detail::random_points(rng, 18, 1.5)));
    c.fn = [q](ad::Tape& t, ad::ParamStore& s) { return chamfer_loss(t, t.parameter(s, "warped"), q); };
    cases.push_back(std::move(c));
  }
  {
    GradcheckCase c;
    c.name = "weighted_smooth";
    c.inputs.add("flow", random_tensor(rng, {p.size(), 3}, -0.5, 0.5));
    c.fn = [p, labels, weights](ad::Tape& t, ad::ParamStore& s) {
      return weighted_smooth_loss(t, p, t.parameter(s, "flow"), labels, weights);
    };
    cases.push_back(std::move(c));
  }
  {
    GradcheckCase c;
    c.name = "total_loss";
    c.inputs.add("flow", random_tensor(rng, {p.size(), 3}, -0.5, 0.5));
    c.fn = [p, q, labels, weights](ad::Tape& t, ad::ParamStore& s) {
      return total_loss(t, p, t.parameter(s, "flow"), q, labels, weights);
    };
    cases.push_back(std::move(c));
  }

  // The training objective of a small synthetic scene with respect to every
  // network parameter. Smooth hidden units keep the many thousands of
  // pre-activations from straddling a rectifier corner inside the step;
  // the rectifiers themselves are checked above.
  {
    SyntheticSpec spec;
    spec.shapes = 2;
    spec.points = 40;
    spec.layout_extent = 1.0;
    spec.seed = stream_seed(seed, "gradcheck-scene");
    ScenePair scene = generate_synthetic_scene(spec);
    scene.labels = LabelSet::from_field({2, 11, 23, 31, 37}, *scene.flow);
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.knn_k = 3;
    cfg.activation = ad::Activation::kTanh;
    auto prepared = std::make_shared<PreparedScene>(prepare_scene(scene, cfg));
    GradcheckCase c;
    c.name = "objective";
    c.inputs = init_params(cfg);
    detail::randomize_biases(c.inputs, rng);
    c.fn = [prepared, cfg](ad::Tape& t, ad::ParamStore& s) { return scene_loss(t, *prepared, cfg, s); };
    cases.push_back(std::move(c));
  }
  return cases;
}

inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt) {
  std::vector<GradcheckResult> out;
  for (auto& c : gradcheck_cases(opt.seed)) out.push_back(run_gradcheck_case(c, opt));
  return out;
}

inline std::string format_gradcheck(const std::vector<GradcheckResult>& results) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %8s %12s  %s\n", "op", "inputs", "rel_error", "status");
  out += line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-26s %8zu %12.3e  %s\n", r.name.c_str(), r.inputs, r.rel_error,
                  r.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace ssflow
