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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssflow/correlation.hpp"
#include "ssflow/encoder.hpp"
#include "ssflow/error.hpp"
#include "ssflow/objectives.hpp"

namespace ssflow {

// Bad key or value in a configuration file or override.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Every knob of label generation and training. Serialized as flat
// key=value text; the echo of a config parses back to an identical config.
struct PipelineConfig {
  std::uint64_t seed = 1;
  double label_ratio = 1.0 / 16.0;
  std::string label_ratio_text = "1/16";
  std::size_t knn_k = 8;
  SetconvSpec setconv;
  std::size_t corr_hidden = 32;
  std::size_t label_candidates = 0;
  ad::Activation activation = ad::Activation::kLeakyRelu;  // hidden units of every network
  LossWeights loss;
  double lr = 1e-3;
  double lr_decay = 0.7;
  std::size_t decay_every = 25;
  std::size_t epochs = 40;
  bool use_correlation = true;
  bool use_memory = true;
  bool use_weighted_smooth = true;
  double eval_fraction = 0.2;
  double normalize_extent = 4.0;  // side of the cube scenes are scaled into

  EncoderConfig encoder_config() const {
    EncoderConfig e{setconv, use_memory};
    e.setconv.activation = activation;
    return e;
  }

  CorrelationConfig correlation_config() const {
    CorrelationConfig c;
    c.mlp_u = ad::MlpSpec::make({2 * setconv.output_width(), corr_hidden, 1}, activation);
    c.mlp_g = ad::MlpSpec::make({6, corr_hidden, 1}, activation);
    c.label_candidates = label_candidates;
    return c;
  }

  // Loss weights as used for training: the uniform-smooth ablation sets
  // beta2 = beta1.
  LossWeights training_loss() const {
    LossWeights w = loss;
    if (!use_weighted_smooth) w.beta2 = w.beta1;
    w.max_neighbors = setconv.max_neighbors;
    return w;
  }

  void validate() const {
    if (!(label_ratio > 0.0 && label_ratio < 1.0)) throw ConfigError("label_ratio must lie in (0, 1)");
    if (knn_k == 0) throw ConfigError("knn_k must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (decay_every == 0) throw ConfigError("decay_every must be positive");
    if (corr_hidden == 0) throw ConfigError("corr_hidden must be positive");
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw ConfigError("eval_fraction must lie in [0, 1)");
    if (!(normalize_extent > 0.0)) throw ConfigError("normalize_extent must be positive");
    try {
      setconv.validate();
      loss.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }

  // Learning rate in effect during a zero-based epoch.
  double lr_at_epoch(std::size_t epoch) const {
    return lr * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
  }

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline const char* activation_name(ad::Activation a) {
  switch (a) {
    case ad::Activation::kLeakyRelu: return "leaky_relu";
    case ad::Activation::kRelu: return "relu";
    case ad::Activation::kTanh: return "tanh";
    case ad::Activation::kIdentity: return "identity";
  }
  return "?";
}

inline ad::Activation parse_activation(const std::string& key, const std::string& v) {
  for (auto a : {ad::Activation::kLeakyRelu, ad::Activation::kRelu, ad::Activation::kTanh, ad::Activation::kIdentity}) {
    if (v == activation_name(a)) return a;
  }
  throw ConfigError(key + ": expected leaky_relu, relu, tanh or identity, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long u = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Accepts "1/16" or a decimal fraction.
inline double parse_ratio(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) return detail::parse_double("ratio", detail::trim(text));
  const double num = detail::parse_double("ratio", detail::trim(text.substr(0, slash)));
  const double den = detail::parse_double("ratio", detail::trim(text.substr(slash + 1)));
  if (den == 0.0) throw ConfigError("ratio: zero denominator");
  return num / den;
}

inline void PipelineConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  if (key == "seed") seed = parse_uint(key, v);
  else if (key == "label_ratio") { label_ratio = parse_ratio(v); label_ratio_text = v; }
  else if (key == "knn_k") knn_k = parse_uint(key, v);
  else if (key == "encoder_widths") {
    setconv.widths.clear();
    for (const auto& s : split_list(v)) setconv.widths.push_back(parse_uint(key, s));
  } else if (key == "encoder_radii") {
    setconv.radii.clear();
    for (const auto& s : split_list(v)) setconv.radii.push_back(parse_double(key, s));
  } else if (key == "encoder_ratios") {
    setconv.ratios.clear();
    for (const auto& s : split_list(v)) setconv.ratios.push_back(parse_double(key, s));
  }
  else if (key == "max_neighbors") setconv.max_neighbors = parse_uint(key, v);
  else if (key == "corr_hidden") corr_hidden = parse_uint(key, v);
  else if (key == "label_candidates") label_candidates = parse_uint(key, v);
  else if (key == "activation") activation = parse_activation(key, v);
  else if (key == "alpha") loss.alpha = parse_double(key, v);
  else if (key == "beta") loss.beta = parse_double(key, v);
  else if (key == "beta1") loss.beta1 = parse_double(key, v);
  else if (key == "beta2") loss.beta2 = parse_double(key, v);
  else if (key == "r_smooth") loss.r_smooth = parse_double(key, v);
  else if (key == "chamfer_mean") loss.chamfer_mean = parse_bool(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "lr_decay") lr_decay = parse_double(key, v);
  else if (key == "decay_every") decay_every = parse_uint(key, v);
  else if (key == "epochs") epochs = parse_uint(key, v);
  else if (key == "use_correlation") use_correlation = parse_bool(key, v);
  else if (key == "use_memory") use_memory = parse_bool(key, v);
  else if (key == "use_weighted_smooth") use_weighted_smooth = parse_bool(key, v);
  else if (key == "eval_fraction") eval_fraction = parse_double(key, v);
  else if (key == "normalize_extent") normalize_extent = parse_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

inline std::string PipelineConfig::to_text() const {
  using detail::format_double;
  std::ostringstream os;
  auto list = [](const auto& xs, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
    return s;
  };
  auto u = [](std::size_t x) { return std::to_string(x); };
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  os << "seed=" << seed << '\n'
     << "label_ratio=" << label_ratio_text << '\n'
     << "knn_k=" << knn_k << '\n'
     << "encoder_widths=" << list(setconv.widths, u) << '\n'
     << "encoder_radii=" << list(setconv.radii, format_double) << '\n'
     << "encoder_ratios=" << list(setconv.ratios, format_double) << '\n'
     << "max_neighbors=" << setconv.max_neighbors << '\n'
     << "corr_hidden=" << corr_hidden << '\n'
     << "label_candidates=" << label_candidates << '\n'
     << "activation=" << detail::activation_name(activation) << '\n'
     << "alpha=" << format_double(loss.alpha) << '\n'
     << "beta=" << format_double(loss.beta) << '\n'
     << "beta1=" << format_double(loss.beta1) << '\n'
     << "beta2=" << format_double(loss.beta2) << '\n'
     << "r_smooth=" << format_double(loss.r_smooth) << '\n'
     << "chamfer_mean=" << b(loss.chamfer_mean) << '\n'
     << "lr=" << format_double(lr) << '\n'
     << "lr_decay=" << format_double(lr_decay) << '\n'
     << "decay_every=" << decay_every << '\n'
     << "epochs=" << epochs << '\n'
     << "use_correlation=" << b(use_correlation) << '\n'
     << "use_memory=" << b(use_memory) << '\n'
     << "use_weighted_smooth=" << b(use_weighted_smooth) << '\n'
     << "eval_fraction=" << format_double(eval_fraction) << '\n'
     << "normalize_extent=" << format_double(normalize_extent) << '\n';
  return os.str();
}

// Applies key=value lines; blank lines and '#' comments are ignored.
inline void apply_config_text(PipelineConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  PipelineConfig cfg;
  apply_config_text(cfg, ss.str());
  return cfg;
}

}  // namespace ssflow
