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

#include "ssflow/diffcore/params.hpp"
#include "ssflow/diffcore/tape.hpp"
#include "ssflow/random.hpp"

namespace ssflow::ad {

// Layer widths (input, hidden..., output) and one activation per hidden
// layer. The output layer is always linear.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;

  static MlpSpec make(std::vector<std::size_t> widths, Activation hidden = Activation::kLeakyRelu) {
    MlpSpec s;
    s.widths = std::move(widths);
    if (s.widths.size() >= 2) s.activations.assign(s.widths.size() - 2, hidden);
    return s;
  }

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw DimensionError("mlp: needs at least one layer");
    for (std::size_t w : widths) {
      if (w == 0) throw DimensionError("mlp: layer widths must be >= 1");
    }
    if (activations.size() != widths.size() - 2) {
      throw DimensionError("mlp: expected " + std::to_string(widths.size() - 2) + " hidden activations");
    }
  }
};

inline std::string mlp_weight_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".l" + std::to_string(layer) + ".weight";
}
inline std::string mlp_bias_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".l" + std::to_string(layer) + ".bias";
}

// Glorot-uniform weights, zero biases.
inline Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_out, fan_in);
  for (double& v : w.data) v = uniform(rng, -limit, limit);
  return w;
}

inline void init_mlp(ParamStore& store, const MlpSpec& spec, const std::string& prefix, Rng& rng) {
  spec.validate();
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    store.add(mlp_weight_name(prefix, l), glorot_uniform(spec.widths[l + 1], spec.widths[l], rng));
    store.add(mlp_bias_name(prefix, l), Tensor(Shape{spec.widths[l + 1]}));
  }
}

namespace detail {

inline void check_layer(const MlpSpec& spec, const ParamStore& store, const std::string& prefix, std::size_t l) {
  const auto& w = store.at(mlp_weight_name(prefix, l)).value;
  const auto& b = store.at(mlp_bias_name(prefix, l)).value;
  const Shape expected{spec.widths[l + 1], spec.widths[l]};
  if (w.shape != expected || b.size() != spec.widths[l + 1]) {
    throw DimensionError("mlp '" + prefix + "' layer " + std::to_string(l) + ": parameters " +
                         shape_string(w.shape) + " do not match spec " + shape_string(expected));
  }
}

// Layers 1.. applied to the layer-0 output `h`, which is already activated
// when `activated` is set.
inline Var mlp_tail(Tape& tape, const MlpSpec& spec, ParamStore& store, const std::string& prefix, Var h,
                    bool activated = false) {
  for (std::size_t l = 1; l < spec.layers(); ++l) {
    check_layer(spec, store, prefix, l);
    if (l > 1 || !activated) h = activate(h, spec.activations[l - 1]);
    h = linear(h, tape.parameter(store, mlp_weight_name(prefix, l)), tape.parameter(store, mlp_bias_name(prefix, l)));
  }
  return h;
}

}  // namespace detail

// Batch x in -> batch x out, recorded on `tape`.
inline Var forward_mlp(Tape& tape, const MlpSpec& spec, ParamStore& store, const std::string& prefix, Var input) {
  spec.validate();
  if (input.cols() != spec.input_width()) {
    throw DimensionError("mlp '" + prefix + "' layer 0: input width " + std::to_string(input.cols()) +
                         ", expected " + std::to_string(spec.input_width()));
  }
  detail::check_layer(spec, store, prefix, 0);
  Var h = linear(input, tape.parameter(store, mlp_weight_name(prefix, 0)),
                 tape.parameter(store, mlp_bias_name(prefix, 0)));
  return detail::mlp_tail(tape, spec, store, prefix, h);
}

// Evaluation without keeping the graph.
inline Tensor forward_mlp(const MlpSpec& spec, const ParamStore& store, const std::string& prefix,
                          const Tensor& input) {
  Tape tape;
  ParamStore& mutable_store = const_cast<ParamStore&>(store);  // read-only use: no backward is run
  return forward_mlp(tape, spec, mutable_store, prefix, tape.constant(input)).value();
}

// MLP applied to every pairwise difference a[i] - b[j]; rows ordered
// i-major, (n*m) x out. The first layer is linear, so it is evaluated as
// W a[i] - W b[j] + bias without materializing the n*m differences.
inline Var forward_mlp_pairwise(Tape& tape, const MlpSpec& spec, ParamStore& store, const std::string& prefix,
                                Var a, Var b) {
  spec.validate();
  for (const Var* v : {&a, &b}) {
    if (v->cols() != spec.input_width()) {
      throw DimensionError("mlp '" + prefix + "' layer 0: input width " + std::to_string(v->cols()) +
                           ", expected " + std::to_string(spec.input_width()));
    }
  }
  detail::check_layer(spec, store, prefix, 0);
  Var w0 = tape.parameter(store, mlp_weight_name(prefix, 0));
  Var b0 = tape.parameter(store, mlp_bias_name(prefix, 0));
  if (spec.layers() == 1) return add_row(pair_diff(linear(a, w0), linear(b, w0)), b0);
  Var h = pair_diff_activate(linear(a, w0), linear(b, w0), b0, spec.activations[0]);
  return detail::mlp_tail(tape, spec, store, prefix, h, true);
}

}  // namespace ssflow::ad
