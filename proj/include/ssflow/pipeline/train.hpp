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
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssflow/metrics.hpp"
#include "ssflow/objectives.hpp"
#include "ssflow/pipeline/model.hpp"
#include "ssflow/random.hpp"

namespace ssflow {

// floor(ratio * n) distinct indices drawn uniformly without replacement,
// returned in ascending order.
inline std::vector<std::size_t> sample_label_indices(std::size_t n, double ratio, std::uint64_t seed) {
  const double raw = ratio * static_cast<double>(n);
  const auto count = static_cast<std::size_t>(std::floor(raw + 1e-9));
  if (count < 1) {
    throw ContractError("sample_labels: ratio " + std::to_string(ratio) + " of " + std::to_string(n) +
                        " points selects no labels");
  }
  if (count >= n) {
    throw ContractError("sample_labels: ratio " + std::to_string(ratio) + " labels every point; need fewer labels than points");
  }
  Rng rng = make_rng(seed, "labels");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = k + uniform_index(rng, n - k);
    std::swap(pool[k], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline LabelSet sample_labels(const ScenePair& scene, double ratio, std::uint64_t seed) {
  if (!scene.flow) throw ContractError("sample_labels: scene " + scene.id + " has no ground-truth flow");
  return LabelSet::from_field(sample_label_indices(scene.p.size(), ratio, seed), *scene.flow);
}

// Labels every scene at `ratio`; scene k draws from seed stream k.
inline void label_dataset(std::vector<ScenePair>& scenes, double ratio, std::uint64_t seed) {
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    scenes[k].labels = sample_labels(scenes[k], ratio, stream_seed(seed, "dataset-labels", k));
  }
}

struct TrainReport {
  std::vector<double> epoch_losses;  // mean per-scene loss, one entry per epoch
  std::optional<FlowMetrics> eval;
  double wall_seconds = 0.0;
  std::string config_echo;

  std::string to_text() const {
    std::ostringstream os;
    os << "# config\n" << config_echo << "# losses\n";
    char buf[64];
    for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
      std::snprintf(buf, sizeof(buf), "%.17g", epoch_losses[e]);
      os << "epoch " << e << " loss=" << buf << '\n';
    }
    if (eval) os << "# eval\n" << eval->to_line() << '\n';
    std::snprintf(buf, sizeof(buf), "%.3f", wall_seconds);
    os << "# wall_seconds=" << buf << '\n';
    return os.str();
  }
};

// Pooled metrics over the unlabeled points of every scene.
inline FlowMetrics evaluate_dataset(const std::vector<ScenePair>& scenes, const ad::ParamStore& params,
                                    const PipelineConfig& cfg) {
  FlowField pred, gt;
  std::vector<std::size_t> mask;
  for (const auto& scene : scenes) {
    if (!scene.flow || !scene.labels) throw ContractError("evaluate_dataset: scene " + scene.id + " lacks flow or labels");
    const FlowField f = generate_pseudo_labels(scene, params, cfg);
    const std::size_t offset = pred.size();
    for (std::size_t i : exclude_labels_mask(scene.p.size(), *scene.labels)) mask.push_back(offset + i);
    pred.insert(pred.end(), f.begin(), f.end());
    gt.insert(gt.end(), scene.flow->begin(), scene.flow->end());
  }
  return evaluate(pred, gt, std::move(mask));
}

// Loss of one scene under the current parameters, recorded on `tape`.
inline Var scene_loss(ad::Tape& tape, const PreparedScene& s, const PipelineConfig& cfg, ad::ParamStore& store) {
  Var flow = forward_pseudo_labels(tape, s, cfg, store);
  return total_loss(tape, s.p, flow, s.q, s.labels, cfg.training_loss());
}

// Adam over the scenes in index order, one update per scene, with the
// learning rate decayed by lr_decay every decay_every epochs. Starts from
// `initial` when given, otherwise from init_params(cfg).
inline std::pair<ad::ParamStore, TrainReport> train(const std::vector<ScenePair>& dataset, const PipelineConfig& cfg,
                                                    const std::vector<ScenePair>& eval_set = {},
                                                    const ad::ParamStore* initial = nullptr) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ad::ParamStore store = initial ? params_for(cfg, *initial) : init_params(cfg);
  TrainReport report;
  report.config_echo = cfg.to_text();

  std::vector<PreparedScene> prepared;
  prepared.reserve(dataset.size());
  for (const auto& scene : dataset) {
    if (!scene.labels) throw ContractError("train: scene " + scene.id + " has no labels");
    prepared.push_back(prepare_scene(scene, cfg));
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    ad::AdamOptions opt;
    opt.lr = cfg.lr_at_epoch(epoch);
    double total = 0.0;
    for (std::size_t k = 0; k < prepared.size(); ++k) {
      ad::Tape tape;
      Var loss = scene_loss(tape, prepared[k], cfg, store);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", scene " + std::to_string(k) +
                           " (" + dataset[k].id + ")");
      }
      total += value;
      if (!cfg.use_correlation) continue;  // nothing upstream of the loss is trainable
      store.zero_grads();
      tape.backward(loss);
      try {
        ad::adam_step(store, opt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", scene " +
                           std::to_string(k) + " (" + dataset[k].id + ")");
      }
    }
    report.epoch_losses.push_back(prepared.empty() ? 0.0 : total / static_cast<double>(prepared.size()));
  }
  store.zero_grads();
  if (!eval_set.empty()) report.eval = evaluate_dataset(eval_set, store, cfg);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(store), std::move(report)};
}

// Holds out the last ceil(eval_fraction * n) scenes (at least one, and at
// least one left for training). Training labels come from `seed`, held-out
// labels from a derived stream.
inline std::pair<std::vector<ScenePair>, std::vector<ScenePair>> split_dataset(std::vector<ScenePair> scenes,
                                                                               const PipelineConfig& cfg) {
  if (scenes.size() < 2) throw ContractError("split_dataset: need at least two scenes");
  auto n_eval = static_cast<std::size_t>(std::ceil(cfg.eval_fraction * static_cast<double>(scenes.size()) - 1e-9));
  n_eval = std::clamp<std::size_t>(n_eval, 1, scenes.size() - 1);
  const auto cut = scenes.begin() + static_cast<std::ptrdiff_t>(scenes.size() - n_eval);
  std::vector<ScenePair> held(std::make_move_iterator(cut), std::make_move_iterator(scenes.end()));
  scenes.erase(cut, scenes.end());
  label_dataset(scenes, cfg.label_ratio, cfg.seed);
  label_dataset(held, cfg.label_ratio, stream_seed(cfg.seed, "eval-labels"));
  return {std::move(scenes), std::move(held)};
}

struct AblationRow {
  std::string name;
  bool use_correlation;
  bool use_memory;
  bool use_weighted_smooth;
  FlowMetrics metrics;
  std::vector<double> losses;
  ad::ParamStore params;  // trained, or the initialization for the bypass row
};

// The five module combinations: none, correlation, correlation + memory,
// correlation + weighted smooth, all three. Every row trains from the same
// seed on the same scenes.
inline std::vector<AblationRow> run_ablation(const std::vector<ScenePair>& train_set,
                                             const std::vector<ScenePair>& eval_set, const PipelineConfig& base) {
  if (train_set.empty() || eval_set.empty()) throw ContractError("run_ablation: empty dataset");
  struct Combo {
    const char* name;
    bool corr, mem, smooth;
  };
  const Combo combos[] = {{"none", false, false, false},
                          {"corr", true, false, false},
                          {"corr+mem", true, true, false},
                          {"corr+smooth", true, false, true},
                          {"corr+mem+smooth", true, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& c : combos) {
    PipelineConfig cfg = base;
    cfg.use_correlation = c.corr;
    cfg.use_memory = c.mem;
    cfg.use_weighted_smooth = c.smooth;
    AblationRow row{c.name, c.corr, c.mem, c.smooth, {}, {}, {}};
    if (c.corr) {
      auto [params, report] = train(train_set, cfg);
      row.metrics = evaluate_dataset(eval_set, params, cfg);
      row.losses = std::move(report.epoch_losses);
      row.params = std::move(params);
    } else {
      row.params = init_params(cfg);
      row.metrics = evaluate_dataset(eval_set, row.params, cfg);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "corr mem smooth | epe as ar out\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-4s %-3s %-6s | %.6f %.6f %.6f %.6f  (%s)\n", r.use_correlation ? "x" : "-",
                  r.use_memory ? "x" : "-", r.use_weighted_smooth ? "x" : "-", r.metrics.epe, r.metrics.acc_strict,
                  r.metrics.acc_relax, r.metrics.outliers, r.name.c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace ssflow
