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

// ssflow command-line driver: gen, train, label, eval, gradcheck, ablate.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssflow/alloc_tuning.hpp"
#include "ssflow/gradcheck.hpp"
#include "ssflow/metrics.hpp"
#include "ssflow/pipeline/config.hpp"
#include "ssflow/pipeline/model.hpp"
#include "ssflow/pipeline/scene.hpp"
#include "ssflow/pipeline/synthetic.hpp"
#include "ssflow/pipeline/train.hpp"

namespace {

using namespace ssflow;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitMismatch = 4;

// Raised for bad arguments detected after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;  // key=value
  std::string ratio;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool no_memory = false;
  bool no_correlation = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, bool with_ratio) {
  cmd->add_option("--config", a.path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.overrides, "override one config key (key=value), repeatable");
  if (with_ratio) cmd->add_option("--ratio", a.ratio, "label ratio, e.g. 1/16 or 0.0625");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&a](std::uint64_t s) { a.seed = s, a.seed_set = true; }, "root seed");
  cmd->add_flag("--no-memory", a.no_memory, "disable the spatial-memory encoder");
  cmd->add_flag("--no-correlation", a.no_correlation, "return the coarse up-sampled flow");
}

// File values first, then --set overrides, then dedicated flags.
PipelineConfig resolve_config(const ConfigArgs& a) {
  PipelineConfig cfg;
  if (!a.path.empty()) cfg = load_config(a.path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.ratio.empty()) cfg.set("label_ratio", a.ratio);
  if (a.seed_set) cfg.seed = a.seed;
  if (a.no_memory) cfg.use_memory = false;
  if (a.no_correlation) cfg.use_correlation = false;
  cfg.validate();
  return cfg;
}

void echo_config(const std::string& text) { std::cout << "# config\n" << text << "# end config\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw FormatError("failed writing " + path);
}

std::vector<ScenePair> load_training_scenes(const std::string& dir) {
  auto scenes = load_scene_dir(dir);
  if (scenes.empty()) throw UsageError("no .ssfl scenes in " + dir);
  for (const auto& s : scenes) {
    if (!s.flow) throw UsageError(s.id + " has no ground-truth flow to sample labels from");
  }
  return scenes;
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  std::size_t scenes = 1;
  std::size_t points = 1024;
  std::size_t shapes = 6;
  double noise = 0.0;
  double max_rotation = 15.0;
  double max_translation = 1.0;
  double extent = 3.0;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  if (a.scenes == 0) throw UsageError("--scenes must be at least 1");
  if (a.points == 0) throw UsageError("--points must be at least 1");
  if (a.shapes == 0) throw UsageError("--shapes must be at least 1");
  if (!(a.noise >= 0.0)) throw UsageError("--noise must be non-negative");
  if (!(a.max_rotation >= 0.0 && a.max_rotation <= 15.0)) throw UsageError("--max-rotation must lie in [0, 15]");
  if (!(a.max_translation >= 0.0 && a.max_translation <= 1.0)) {
    throw UsageError("--max-translation must lie in [0, 1]");
  }
  std::cout << "# config\nscenes=" << a.scenes << "\npoints=" << a.points << "\nshapes=" << a.shapes
            << "\nnoise=" << detail::format_double(a.noise) << "\nmax_rotation=" << detail::format_double(a.max_rotation)
            << "\nmax_translation=" << detail::format_double(a.max_translation)
            << "\nextent=" << detail::format_double(a.extent) << "\nseed=" << a.seed << "\n# end config\n";
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw FormatError("cannot create " + a.out + ": " + ec.message());
  for (std::size_t k = 0; k < a.scenes; ++k) {
    SyntheticSpec spec;
    spec.shapes = std::min(a.shapes, a.points);
    spec.points = a.points;
    spec.noise_sigma = a.noise;
    spec.motion.max_rotation_deg = a.max_rotation;
    spec.motion.max_translation = a.max_translation;
    spec.layout_extent = a.extent;
    spec.seed = stream_seed(a.seed, "data", k);
    const ScenePair scene = generate_synthetic_scene(spec);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu.ssfl", k);
    const std::string path = (std::filesystem::path(a.out) / name).string();
    save_scene(scene, path);
    std::cout << path << " n=" << scene.p.size() << '\n';
  }
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string report;
  std::string eval_data;
  ConfigArgs config;
};

int cmd_train(const TrainArgs& a) {
  const PipelineConfig cfg = resolve_config(a.config);
  echo_config(cfg.to_text());
  auto scenes = load_training_scenes(a.data);
  label_dataset(scenes, cfg.label_ratio, cfg.seed);
  std::vector<ScenePair> eval_set;
  if (!a.eval_data.empty()) {
    eval_set = load_training_scenes(a.eval_data);
    label_dataset(eval_set, cfg.label_ratio, stream_seed(cfg.seed, "eval-labels"));
  }
  auto [params, report] = train(scenes, cfg, eval_set);
  ad::save_checkpoint(params, a.out);
  const std::string report_path = a.report.empty() ? a.out + ".report.txt" : a.report;
  write_text(report_path, report.to_text());
  for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
    std::printf("epoch %zu loss=%.17g\n", e, report.epoch_losses[e]);
  }
  if (report.eval) std::printf("eval %s\n", report.eval->to_line().c_str());
  std::printf("checkpoint %s\nreport %s\n", a.out.c_str(), report_path.c_str());
  return kExitOk;
}

// ---- label -----------------------------------------------------------------

struct LabelArgs {
  std::string data;
  std::string ckpt;
  std::string out;
  ConfigArgs config;
};

int cmd_label(const LabelArgs& a) {
  const PipelineConfig cfg = resolve_config(a.config);
  echo_config(cfg.to_text());
  ScenePair scene = load_scene(a.data);
  if (scene.flow) {
    scene.labels = sample_labels(scene, cfg.label_ratio, cfg.seed);
  } else if (!scene.labels) {
    throw UsageError(a.data + " has neither ground-truth flow nor labels");
  }
  const ad::ParamStore params = a.ckpt.empty() ? init_params(cfg) : params_for(cfg, ad::load_checkpoint(a.ckpt));
  const FlowField pseudo = generate_pseudo_labels(scene, params, cfg);
  if (scene.flow) {
    const FlowMetrics m = evaluate(pseudo, *scene.flow, exclude_labels_mask(scene.p.size(), *scene.labels));
    std::printf("%s\n", m.to_line().c_str());
  }
  ScenePair out = scene;
  out.flow = pseudo;
  save_scene(out, a.out);
  std::printf("wrote %s\n", a.out.c_str());
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------

int cmd_eval(const std::string& pred_path, const std::string& gt_path) {
  const ScenePair pred = load_scene(pred_path);
  const ScenePair gt = load_scene(gt_path);
  if (!pred.flow) throw UsageError(pred_path + " carries no flow");
  if (!gt.flow) throw UsageError(gt_path + " carries no ground-truth flow");
  if (pred.flow->size() != gt.flow->size()) {
    throw UsageError("point counts differ: " + std::to_string(pred.flow->size()) + " vs " +
                     std::to_string(gt.flow->size()));
  }
  const std::size_t n = gt.flow->size();
  std::cout << "# config\npred=" << pred_path << "\ngt=" << gt_path << "\n# end config\n";
  std::vector<std::size_t> mask;
  if (pred.labels) {
    mask = exclude_labels_mask(n, *pred.labels);
  } else {
    mask.resize(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = i;
  }
  std::printf("%s\n", evaluate(*pred.flow, *gt.flow, mask).to_line().c_str());
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const GradcheckOptions& opt) {
  std::cout << "# config\nseed=" << opt.seed << "\nstep=" << detail::format_double(opt.step)
            << "\ntolerance=" << detail::format_double(opt.tolerance) << "\n# end config\n";
  const auto results = run_gradcheck(opt);
  std::cout << format_gradcheck(results);
  bool ok = true;
  for (const auto& r : results) {
    if (!r.passed) {
      ok = false;
      std::fprintf(stderr, "gradcheck failed: %s rel_error=%.3e\n", r.name.c_str(), r.rel_error);
    }
  }
  return ok ? kExitOk : kExitNumeric;
}

// ---- ablate ----------------------------------------------------------------

int cmd_ablate(const std::string& data, const ConfigArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  echo_config(cfg.to_text());
  auto scenes = load_training_scenes(data);
  if (scenes.size() < 2) throw UsageError("ablation needs at least two scenes");
  auto [train_set, eval_set] = split_dataset(std::move(scenes), cfg);
  std::printf("train_scenes=%zu eval_scenes=%zu\n", train_set.size(), eval_set.size());
  std::cout << format_ablation(run_ablation(train_set, eval_set, cfg));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"ssflow: pseudo-label generation for point-cloud scene flow"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "write seeded synthetic scene pairs");
  gen_cmd->add_option("--scenes", gen.scenes, "number of scenes");
  gen_cmd->add_option("--points", gen.points, "points per scene");
  gen_cmd->add_option("--shapes", gen.shapes, "rigid shapes per scene");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian jitter sigma on Q");
  gen_cmd->add_option("--max-rotation", gen.max_rotation, "per-shape rotation bound, degrees");
  gen_cmd->add_option("--max-translation", gen.max_translation, "per-shape translation bound");
  gen_cmd->add_option("--extent", gen.extent, "side of the cube shape centers are drawn from");
  gen_cmd->add_option("--seed", gen.seed, "root seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train the label generator");
  train_cmd->add_option("--data", tr.data, "directory of .ssfl scenes")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--report", tr.report, "report path (default: <out>.report.txt)");
  train_cmd->add_option("--eval-data", tr.eval_data, "held-out scene directory for the report");
  add_config_options(train_cmd, tr.config, true);

  LabelArgs lb;
  auto* label_cmd = app.add_subcommand("label", "write pseudo-labels for one scene");
  label_cmd->add_option("--data", lb.data, "input scene file")->required();
  label_cmd->add_option("--ckpt", lb.ckpt, "checkpoint (default: untrained initialization)");
  label_cmd->add_option("--out", lb.out, "output scene file")->required();
  add_config_options(label_cmd, lb.config, true);

  std::string pred_path, gt_path;
  auto* eval_cmd = app.add_subcommand("eval", "metrics of a predicted flow against ground truth");
  eval_cmd->add_option("--pred", pred_path, "scene file whose flow is the prediction")->required();
  eval_cmd->add_option("--gt", gt_path, "scene file with ground-truth flow")->required();

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every gradient");
  gc_cmd->add_option("--seed", gc.seed, "seed for the random test inputs");
  gc_cmd->add_option("--corrupt", gc.corrupt, "scale the analytic gradient of one case (test hook)")
      ->group("");

  std::string ablate_data;
  ConfigArgs ablate_cfg;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate the five module combinations");
  ablate_cmd->add_option("--data", ablate_data, "directory of .ssfl scenes")->required();
  add_config_options(ablate_cmd, ablate_cfg, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*label_cmd) return cmd_label(lb);
    if (*eval_cmd) return cmd_eval(pred_path, gt_path);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*ablate_cmd) return cmd_ablate(ablate_data, ablate_cfg);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const ArtifactMismatch& e) {
    std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
    return kExitMismatch;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
