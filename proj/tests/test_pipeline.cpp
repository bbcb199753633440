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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "ssflow/objectives.hpp"
#include "ssflow/pipeline/config.hpp"
#include "ssflow/pipeline/model.hpp"
#include "ssflow/pipeline/scene.hpp"
#include "ssflow/pipeline/synthetic.hpp"
#include "ssflow/pipeline/train.hpp"
#include "test_util.hpp"

namespace ssflow {
namespace {

std::string scene_bytes(const ScenePair& s) {
  std::ostringstream os;
  write_scene(s, os);
  return os.str();
}

SyntheticSpec small_spec(std::uint64_t seed, std::size_t points = 256) {
  SyntheticSpec s;
  s.seed = seed;
  s.points = points;
  s.shapes = 3;
  return s;
}

PipelineConfig small_config() {
  PipelineConfig cfg;
  cfg.setconv.widths = {8, 8};
  cfg.setconv.radii = {0.5, 1.0};
  cfg.setconv.ratios = {1.0, 0.5};
  cfg.corr_hidden = 8;
  cfg.label_ratio = 1.0 / 8.0;
  cfg.label_ratio_text = "1/8";
  return cfg;
}

ScenePair labeled_scene(std::uint64_t seed, double ratio = 1.0 / 8.0, std::size_t points = 256) {
  ScenePair s = generate_synthetic_scene(small_spec(seed, points));
  s.labels = sample_labels(s, ratio, seed);
  return s;
}

TEST(Config, TextRoundTrip) {
  PipelineConfig cfg;
  cfg.set("label_ratio", "1/32");
  cfg.set("encoder_widths", "4, 8");
  cfg.set("encoder_radii", "0.3,0.6");
  cfg.set("encoder_ratios", "1,0.25");
  cfg.set("activation", "tanh");
  cfg.set("use_memory", "false");
  cfg.set("lr", "0.002");
  PipelineConfig back;
  apply_config_text(back, "# comment\n\n" + cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_EQ(back.label_ratio, 1.0 / 32.0);
  EXPECT_EQ(back.setconv.widths, (std::vector<std::size_t>{4, 8}));
  EXPECT_FALSE(back.use_memory);
}

TEST(Config, RejectsBadInput) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(cfg.set("knn_k", "-3"), ConfigError);
  EXPECT_THROW(cfg.set("lr", "fast"), ConfigError);
  EXPECT_THROW(cfg.set("use_memory", "maybe"), ConfigError);
  EXPECT_THROW(cfg.set("label_ratio", "1/0"), ConfigError);
  cfg.set("label_ratio", "1");
  EXPECT_THROW(cfg.validate(), ConfigError);
  PipelineConfig c2;
  c2.set("encoder_widths", "8,8");
  EXPECT_THROW(c2.validate(), ConfigError);
  EXPECT_THROW(apply_config_text(c2, "novalue\n"), ConfigError);
}

TEST(Config, LearningRateSchedule) {
  PipelineConfig cfg;
  EXPECT_EQ(cfg.lr_at_epoch(0), 0.001);
  EXPECT_EQ(cfg.lr_at_epoch(24), 0.001);
  EXPECT_EQ(cfg.lr_at_epoch(25), 0.0007);
  EXPECT_NEAR(cfg.lr_at_epoch(50), 0.001 * 0.49, 1e-18);
}

TEST(SceneFormat, BinaryRoundTripIsBitExact) {
  ScenePair s = labeled_scene(70);
  const std::string bytes = scene_bytes(s);
  EXPECT_EQ(bytes.substr(0, 4), "SSFL");
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 3u);
  const std::uint32_t n = static_cast<unsigned char>(bytes[7]) | (static_cast<unsigned char>(bytes[8]) << 8);
  EXPECT_EQ(n, 256u);
  std::istringstream is(bytes);
  const ScenePair back = read_scene(is);
  EXPECT_EQ(scene_bytes(back), bytes);
  EXPECT_EQ(back.labels->flows, s.labels->flows);
}

TEST(SceneFormat, CsvRoundTrip) {
  const ScenePair s = labeled_scene(71);
  std::ostringstream csv;
  write_scene_csv(s, csv);
  std::istringstream in(csv.str());
  const ScenePair back = read_scene_csv(in);
  ASSERT_EQ(back.p.size(), s.p.size());
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(back.p[i][c], s.p[i][c], 1e-15 * std::max(1.0, std::abs(s.p[i][c])));
      EXPECT_NEAR((*back.flow)[i][c], (*s.flow)[i][c], 1e-15 * std::max(1.0, std::abs((*s.flow)[i][c])));
    }
  }
  EXPECT_EQ(back.labels->indices, s.labels->indices);
}

TEST(SceneFormat, CorruptInputIsRejected) {
  std::istringstream bad_magic("SSFX");
  EXPECT_THROW(read_scene(bad_magic), FormatError);
  const std::string bytes = scene_bytes(labeled_scene(72));
  std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_scene(truncated), FormatError);
  std::istringstream bad_csv("a,b\n");
  EXPECT_THROW(read_scene_csv(bad_csv), FormatError);
}

TEST(Synthetic, NoMotionMeansNoFlow) {
  SyntheticSpec spec = small_spec(73);
  spec.motion.max_rotation_deg = 0.0;
  spec.motion.max_translation = 0.0;
  const ScenePair s = generate_synthetic_scene(spec);
  for (const auto& f : *s.flow) EXPECT_EQ(f, (Vec3{0, 0, 0}));
  EXPECT_EQ(s.q.coords, s.p.coords);
}

TEST(Synthetic, PureTranslation) {
  SyntheticSpec spec = small_spec(74);
  spec.motion.max_rotation_deg = 0.0;
  spec.motion.fixed_translation = Vec3{0.25, -0.5, 0.75};
  const ScenePair s = generate_synthetic_scene(spec);
  for (const auto& f : *s.flow) EXPECT_EQ(f, *spec.motion.fixed_translation);
  EXPECT_EQ(chamfer_loss(warp(s.p, *s.flow), s.q), 0.0);
}

TEST(Synthetic, MotionBounds) {
  SyntheticSpec spec = small_spec(75, 600);
  spec.motion.max_rotation_deg = 0.0;
  const ScenePair s = generate_synthetic_scene(spec);
  for (const auto& f : *s.flow) EXPECT_LE(norm(f), 1.0 + 1e-12);
  EXPECT_EQ(s.p.size(), 600u);
  EXPECT_THROW(generate_synthetic_scene(small_spec(1, 0)), ContractError);
}

TEST(Synthetic, SeededRegenerationIsByteIdentical) {
  EXPECT_EQ(scene_bytes(generate_synthetic_scene(small_spec(76))), scene_bytes(generate_synthetic_scene(small_spec(76))));
  EXPECT_NE(scene_bytes(generate_synthetic_scene(small_spec(76))), scene_bytes(generate_synthetic_scene(small_spec(77))));
}

TEST(Labels, Counting) {
  const ScenePair s = generate_synthetic_scene(small_spec(78, 64));
  const LabelSet l = sample_labels(s, 1.0 / 8.0, 5);
  EXPECT_EQ(l.size(), 8u);
  EXPECT_NO_THROW(l.validate(64));
  EXPECT_EQ(sample_labels(s, 1.0 / 8.0, 5).indices, l.indices);
  EXPECT_NE(sample_labels(s, 1.0 / 8.0, 6).indices, l.indices);
  EXPECT_THROW(sample_labels(s, 1.0, 5), ContractError);
  EXPECT_THROW(sample_labels(s, 1.0 / 128.0, 5), ContractError);
}

TEST(Labels, MaskSizesGrowAsRatioShrinks) {
  const ScenePair s = generate_synthetic_scene(small_spec(79, 1024));
  std::size_t last = 0;
  for (double r : {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    const std::size_t m = exclude_labels_mask(1024, sample_labels(s, r, 1)).size();
    EXPECT_GT(m, last);
    last = m;
  }
}

TEST(Frame, FitsCubeAndInverts) {
  const ScenePair s = generate_synthetic_scene(small_spec(80));
  const SceneFrame f = fit_frame(s.p, s.q, 4.0);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto* set : {&s.p, &s.q}) {
    for (const auto& x : set->coords) {
      const Vec3 y = f.to_frame(x);
      for (int c = 0; c < 3; ++c) lo = std::min(lo, y[c]), hi = std::max(hi, y[c]);
    }
  }
  EXPECT_NEAR(hi - lo, 4.0, 1e-12);
  const Vec3 v{0.3, -0.1, 0.2};
  const Vec3 back = f.flow_from_frame(f.flow_to_frame(v));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(back[c], v[c], 1e-15);
}

TEST(Generator, LabelsPreservedBitwise) {
  const PipelineConfig cfg = small_config();
  const ad::ParamStore params = init_params(cfg);
  const ScenePair s = labeled_scene(81);
  const FlowField f = generate_pseudo_labels(s, params, cfg);
  for (std::size_t k = 0; k < s.labels->size(); ++k) EXPECT_EQ(f[s.labels->indices[k]], s.labels->flows[k]);
}

TEST(Generator, UniformTranslationIsReproduced) {
  PipelineConfig cfg = small_config();
  cfg.seed = 9;
  const ad::ParamStore params = init_params(cfg);
  SyntheticSpec spec = small_spec(82);
  spec.motion.max_rotation_deg = 0.0;
  spec.motion.fixed_translation = Vec3{0.3, 0.1, -0.6};
  ScenePair s = generate_synthetic_scene(spec);
  s.labels = sample_labels(s, cfg.label_ratio, 3);
  for (const auto& f : generate_pseudo_labels(s, params, cfg)) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(f[c], (*spec.motion.fixed_translation)[c], 1e-12);
  }
}

TEST(Generator, BypassReturnsCoarseFlow) {
  PipelineConfig cfg = small_config();
  cfg.use_correlation = false;
  const ScenePair s = labeled_scene(83);
  EXPECT_EQ(generate_pseudo_labels(s, init_params(cfg), cfg), coarse_upsample(s.p, *s.labels, cfg.knn_k));
}

TEST(Generator, ForwardNeedsPreparedGraphs) {
  PipelineConfig cfg = small_config();
  cfg.use_correlation = false;
  const PreparedScene prepared = prepare_scene(labeled_scene(84), cfg);
  cfg.use_correlation = true;
  ad::ParamStore store = init_params(cfg);
  ad::Tape tape;
  EXPECT_THROW(forward_pseudo_labels(tape, prepared, cfg, store), ContractError);
}

TEST(Generator, CandidateCapStillPreservesLabels) {
  PipelineConfig cfg = small_config();
  cfg.label_candidates = 4;
  const ScenePair s = labeled_scene(85);
  const FlowField f = generate_pseudo_labels(s, init_params(cfg), cfg);
  for (std::size_t k = 0; k < s.labels->size(); ++k) EXPECT_EQ(f[s.labels->indices[k]], s.labels->flows[k]);
}

TEST(Checkpoint, WrongArchitectureIsMismatch) {
  PipelineConfig a = small_config(), b = small_config();
  b.corr_hidden = 4;
  EXPECT_THROW(params_for(b, init_params(a)), ArtifactMismatch);
}

TEST(Train, ZeroEpochsLeavesParameters) {
  PipelineConfig cfg = small_config();
  cfg.epochs = 0;
  auto [params, report] = train({labeled_scene(86)}, cfg);
  EXPECT_TRUE(params.same_values(init_params(cfg)));
  EXPECT_TRUE(report.epoch_losses.empty());
}

TEST(Train, DeterministicAndReportsEval) {
  PipelineConfig cfg = small_config();
  cfg.epochs = 2;
  const std::vector<ScenePair> data{labeled_scene(87), labeled_scene(88)};
  const std::vector<ScenePair> held{labeled_scene(89)};
  auto [p1, r1] = train(data, cfg, held);
  auto [p2, r2] = train(data, cfg, held);
  ASSERT_EQ(r1.epoch_losses.size(), 2u);
  EXPECT_EQ(r1.epoch_losses, r2.epoch_losses);
  EXPECT_TRUE(p1.same_values(p2));
  ASSERT_TRUE(r1.eval.has_value());
  EXPECT_GT(r1.eval->n_evaluated, 0u);
  EXPECT_NE(r1.to_text().find("label_ratio=1/8"), std::string::npos);
}

TEST(Train, FiftyEpochMovingAverageDecreases) {
  PipelineConfig cfg = small_config();
  cfg.epochs = 50;
  std::vector<ScenePair> data;
  for (std::uint64_t k = 0; k < 20; ++k) data.push_back(labeled_scene(300 + k, 1.0 / 8.0, 128));
  const auto [params, report] = train(data, cfg);
  ASSERT_EQ(report.epoch_losses.size(), 50u);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t e = 4; e < 50; ++e) {
    double avg = 0.0;
    for (std::size_t j = e - 4; j <= e; ++j) avg += report.epoch_losses[j] / 5.0;
    EXPECT_LT(avg, prev) << "window ending at epoch " << e;
    prev = avg;
  }
}

TEST(Train, MissingLabelsIsContractError) {
  ScenePair s = generate_synthetic_scene(small_spec(90));
  EXPECT_THROW(train({s}, small_config()), ContractError);
}

TEST(Ablation, FiveRowsAndBypassRowIsCoarse) {
  PipelineConfig cfg = small_config();
  cfg.epochs = 1;
  const std::vector<ScenePair> data{labeled_scene(91)};
  const std::vector<ScenePair> held{labeled_scene(92)};
  const auto rows = run_ablation(data, held, cfg);
  ASSERT_EQ(rows.size(), 5u);
  PipelineConfig coarse = cfg;
  coarse.use_correlation = false;
  EXPECT_EQ(rows[0].metrics.epe, evaluate_dataset(held, init_params(cfg), coarse).epe);
  EXPECT_TRUE(rows[0].losses.empty());
  const std::string table = format_ablation(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
}

}  // namespace
}  // namespace ssflow
