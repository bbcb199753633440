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

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ssflow/pipeline/scene.hpp"
#include "ssflow/pipeline/synthetic.hpp"

#ifndef SSFLOW_CLI_PATH
#error "SSFLOW_CLI_PATH must name the ssflow executable"
#endif

namespace ssflow {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SSFLOW_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ssflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, GenWritesSeededFiles) {
  auto r = run("gen --scenes 1 --points 8 --seed 4 --out " + path("a"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("n=8"), std::string::npos);
  ASSERT_EQ(run("gen --scenes 1 --points 8 --seed 4 --out " + path("b")).code, 0);
  EXPECT_EQ(slurp(path("a/scene_0000.ssfl")), slurp(path("b/scene_0000.ssfl")));
  EXPECT_EQ(load_scene(path("a/scene_0000.ssfl")).p.size(), 8u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("gen --scenes 1 --points 0 --out " + path("x")).code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --data " + path("") + " --out " + path("m") + " --set bogus=1").code, 2);
}

TEST_F(Cli, TrainLabelEvalRoundTrip) {
  ASSERT_EQ(run("gen --scenes 2 --points 192 --seed 2 --out " + path("d")).code, 0);
  const std::string small = " --set encoder_widths=8,8 --set encoder_radii=0.5,1 --set encoder_ratios=1,0.5"
                            " --set corr_hidden=8 --ratio 1/16";
  auto t = run("train --data " + path("d") + " --out " + path("m1") + small + " --set epochs=1 --seed 3");
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_NE(t.out.find("label_ratio=1/16"), std::string::npos);
  ASSERT_EQ(run("train --data " + path("d") + " --out " + path("m2") + small + " --set epochs=1 --seed 3").code, 0);
  EXPECT_EQ(slurp(path("m1")), slurp(path("m2")));
  EXPECT_EQ(slurp(path("m1.report.txt")).substr(0, 200), slurp(path("m2.report.txt")).substr(0, 200));

  auto l = run("label --data " + path("d/scene_0000.ssfl") + " --ckpt " + path("m1") + small + " --out " + path("p.ssfl"));
  ASSERT_EQ(l.code, 0) << l.out;
  EXPECT_NE(l.out.find("epe="), std::string::npos);
  auto e = run("eval --pred " + path("p.ssfl") + " --gt " + path("d/scene_0000.ssfl"));
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("n=180"), std::string::npos);  // 192 points minus 12 labels

  auto wrong = run("label --data " + path("d/scene_0000.ssfl") + " --ckpt " + path("m1") + " --out " + path("q.ssfl"));
  EXPECT_EQ(wrong.code, 4) << wrong.out;
}

TEST_F(Cli, BypassMatchesCoarse) {
  ASSERT_EQ(run("gen --scenes 1 --points 128 --seed 6 --out " + path("d")).code, 0);
  auto a = run("label --data " + path("d/scene_0000.ssfl") + " --no-correlation --ratio 1/8 --out " + path("a.ssfl"));
  ASSERT_EQ(a.code, 0) << a.out;
  ScenePair s = load_scene(path("d/scene_0000.ssfl"));
  const ScenePair p = load_scene(path("a.ssfl"));
  ASSERT_TRUE(p.labels.has_value());
  EXPECT_EQ(*p.flow, coarse_upsample(s.p, *p.labels, 8));
}

TEST_F(Cli, PureTranslationLabelsExactly) {
  SyntheticSpec spec;
  spec.points = 200;
  spec.seed = 12;
  spec.motion.max_rotation_deg = 0.0;
  spec.motion.fixed_translation = Vec3{0.5, -0.25, 0.125};
  save_scene(generate_synthetic_scene(spec), path("t.ssfl"));
  auto r = run("label --data " + path("t.ssfl") + " --ratio 1/16 --out " + path("o.ssfl"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("epe=0.000000"), std::string::npos) << r.out;
}

TEST_F(Cli, EvalThresholds) {
  ASSERT_EQ(run("gen --scenes 1 --points 64 --seed 8 --out " + path("d")).code, 0);
  const std::string gt = path("d/scene_0000.ssfl");
  EXPECT_NE(run("eval --pred " + gt + " --gt " + gt).out.find("epe=0.000000 as=1.000000 ar=1.000000 out=0.000000"),
            std::string::npos);
  for (double shift : {0.04, 0.5}) {
    ScenePair s = load_scene(gt);
    for (auto& f : *s.flow) f[0] += shift;
    save_scene(s, path("shift.ssfl"));
    const auto r = run("eval --pred " + path("shift.ssfl") + " --gt " + gt);
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find(shift < 0.1 ? "as=1.000000" : "out=1.000000"), std::string::npos) << r.out;
  }
  ScenePair s = load_scene(gt);
  s.p.coords.pop_back();
  s.q.coords.pop_back();
  s.flow->pop_back();
  save_scene(s, path("short.ssfl"));
  EXPECT_EQ(run("eval --pred " + path("short.ssfl") + " --gt " + gt).code, 2);
  EXPECT_EQ(run("eval --pred " + path("missing.ssfl") + " --gt " + gt).code, 1);
}

TEST_F(Cli, GradcheckCorruptionFails) {
  EXPECT_EQ(run("gradcheck --corrupt add").code, 3);
}

}  // namespace
}  // namespace ssflow
