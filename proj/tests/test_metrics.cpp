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

#include "ssflow/metrics.hpp"
#include "test_util.hpp"

namespace ssflow {
namespace {

FlowMetrics single(const Vec3& pred, const Vec3& gt) { return evaluate({pred}, {gt}, {0}); }

TEST(Metrics, PerfectPrediction) {
  Rng rng = make_rng(50, "met");
  const FlowField f = testing::random_flow(rng, 30);
  const auto m = evaluate(f, f, exclude_labels_mask(30, LabelSet{}));
  EXPECT_EQ(m.epe, 0.0);
  EXPECT_EQ(m.acc_strict, 1.0);
  EXPECT_EQ(m.acc_relax, 1.0);
  EXPECT_EQ(m.outliers, 0.0);
  EXPECT_EQ(m.n_evaluated, 30u);
}

TEST(Metrics, ThresholdCases) {
  const auto near = single({1.04, 0, 0}, {1, 0, 0});
  EXPECT_EQ(near.acc_strict, 1.0);
  EXPECT_EQ(near.outliers, 0.0);

  const auto far = single({1.2, 0, 0}, {1, 0, 0});
  EXPECT_EQ(far.acc_strict, 0.0);
  EXPECT_EQ(far.acc_relax, 0.0);
  EXPECT_EQ(far.outliers, 1.0);
}

TEST(Metrics, ZeroGroundTruth) {
  const auto m = single({0.01, 0, 0}, {0, 0, 0});
  EXPECT_EQ(m.acc_strict, 1.0);  // absolute error below 0.05
  EXPECT_EQ(m.outliers, 1.0);    // relative error infinite
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
}

TEST(Metrics, MaskOrderDoesNotMatter) {
  Rng rng = make_rng(51, "met");
  const FlowField a = testing::random_flow(rng, 20), b = testing::random_flow(rng, 20);
  const auto m1 = evaluate(a, b, {1, 5, 9, 12});
  const auto m2 = evaluate(a, b, {12, 9, 1, 5});
  EXPECT_EQ(m1.epe, m2.epe);
  EXPECT_THROW(evaluate(a, b, {}), ContractError);
  EXPECT_THROW(evaluate(a, FlowField(3), {0}), DimensionError);
}

TEST(Mask, ExcludesLabels) {
  LabelSet l;
  l.indices = {0, 2};
  EXPECT_EQ(exclude_labels_mask(4, l), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(exclude_labels_mask(3, LabelSet{}).size(), 3u);
  LabelSet eighth;
  for (std::size_t i = 0; i < 8192; i += 8) eighth.indices.push_back(i);
  EXPECT_EQ(exclude_labels_mask(8192, eighth).size(), 7168u);
}

TEST(Metrics, LineFormat) {
  const auto m = single({1, 0, 0}, {1, 0, 0});
  EXPECT_EQ(m.to_line(), "epe=0.000000 as=1.000000 ar=1.000000 out=0.000000 n=1");
}

}  // namespace
}  // namespace ssflow
