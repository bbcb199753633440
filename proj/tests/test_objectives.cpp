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

#include <limits>

#include "ssflow/objectives.hpp"
#include "test_util.hpp"

namespace ssflow {
namespace {

double chamfer_oracle(const PointSet& a, const PointSet& b) {
  auto dir = [](const PointSet& x, const PointSet& y) {
    double s = 0;
    for (const auto& p : x.coords) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y.coords) best = std::min(best, squared_distance(p, q));
      s += best;
    }
    return s;
  };
  return dir(a, b) + dir(b, a);
}

// Mean unsquared flow difference over each center's strict r-neighborhood,
// self excluded, weighted by beta1 / beta2.
double smooth_oracle(const PointSet& p, const FlowField& f, const std::vector<bool>& labeled, double r, double b1,
                     double b2) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (j == i || norm(p[i] - p[j]) >= r) continue;
      s += norm(f[i] - f[j]);
      ++n;
    }
    if (n > 0) total += (labeled[i] ? b2 : b1) * s / static_cast<double>(n);
  }
  return total;
}

TEST(Chamfer, HandValueAndIdentity) {
  PointSet a, b;
  a.coords = {{0, 0, 0}};
  b.coords = {{1, 0, 0}};
  EXPECT_EQ(chamfer_loss(a, b), 2.0);
  EXPECT_EQ(chamfer_loss(b, b), 0.0);
}

TEST(Chamfer, SymmetricAndMatchesOracle) {
  Rng rng = make_rng(40, "obj");
  for (int trial = 0; trial < 10; ++trial) {
    const PointSet a = testing::random_cloud(rng, 50), b = testing::random_cloud(rng, 70);
    EXPECT_NEAR(chamfer_loss(a, b), chamfer_loss(b, a), 1e-12);
    EXPECT_NEAR(chamfer_loss(a, b), chamfer_oracle(a, b), 1e-12);
  }
}

TEST(Smooth, TwoPointHandTrace) {
  PointSet p;
  p.coords = {{0, 0, 0}, {0.1, 0, 0}};
  const FlowField f{{0, 0, 0}, {1, 0, 0}};
  LossWeights w;
  w.beta1 = 1.0;
  w.beta2 = 0.0;
  EXPECT_EQ(weighted_smooth_loss(p, f, LabelSet{}, w), 2.0);
}

TEST(Smooth, ConstantFlowIsZero) {
  Rng rng = make_rng(41, "obj");
  const PointSet p = testing::random_cloud(rng, 100);
  LabelSet labels;
  labels.indices = {3, 9};
  labels.flows = {{1, 2, 3}, {1, 2, 3}};
  EXPECT_EQ(weighted_smooth_loss(p, FlowField(100, Vec3{1, 2, 3}), labels, LossWeights{}), 0.0);
}

TEST(Smooth, MatchesOracleAndIsLinearInBetas) {
  Rng rng = make_rng(42, "obj");
  const PointSet p = testing::random_cloud(rng, 120);
  const FlowField f = testing::random_flow(rng, 120);
  LabelSet labels;
  labels.indices = testing::random_subset(rng, 120, 12);
  labels.flows = FlowField(12);
  LossWeights w;
  w.r_smooth = 0.4;
  const auto mask = labels.mask(120);
  EXPECT_NEAR(weighted_smooth_loss(p, f, labels, w), smooth_oracle(p, f, mask, 0.4, w.beta1, w.beta2), 1e-12);

  const auto [u, l] = smooth_terms(p, f, labels, w);
  LossWeights doubled = w;
  doubled.beta1 *= 2.0;
  const auto [u2, l2] = smooth_terms(p, f, labels, doubled);
  EXPECT_EQ(u2, u);
  EXPECT_EQ(l2, l);
  EXPECT_NEAR(weighted_smooth_loss(p, f, labels, w), w.beta1 * u + w.beta2 * l, 1e-12);
  EXPECT_NEAR(weighted_smooth_loss(p, f, labels, doubled), 2.0 * w.beta1 * u + w.beta2 * l, 1e-12);
}

TEST(Smooth, IsolatedPointContributesNothing) {
  PointSet p;
  p.coords = {{0, 0, 0}, {0.1, 0, 0}, {50, 50, 50}};
  FlowField f{{0, 0, 0}, {0, 0, 0}, {7, 7, 7}};
  EXPECT_EQ(weighted_smooth_loss(p, f, LabelSet{}, LossWeights{}), 0.0);
}

TEST(TotalLoss, ComponentOracle) {
  Rng rng = make_rng(43, "obj");
  const PointSet p = testing::random_cloud(rng, 60), q = testing::random_cloud(rng, 60);
  const FlowField f = testing::random_flow(rng, 60, 0.2);
  LabelSet labels;
  labels.indices = testing::random_subset(rng, 60, 6);
  labels.flows = FlowField(6);
  LossWeights w;
  PointSet warped = p;
  for (std::size_t i = 0; i < 60; ++i) warped[i] = p[i] + f[i];
  const double expect = 0.75 * chamfer_oracle(warped, q) +
                        0.25 * smooth_oracle(p, f, labels.mask(60), w.r_smooth, w.beta1, w.beta2);
  EXPECT_NEAR(total_loss(p, f, q, labels, w), expect, 1e-10);

  w.alpha = 0.0;
  EXPECT_EQ(total_loss(p, f, q, labels, w), w.beta * weighted_smooth_loss(p, f, labels, w));
}

TEST(TotalLoss, PerfectConstantFlowIsZero) {
  Rng rng = make_rng(44, "obj");
  const PointSet p = testing::random_cloud(rng, 40);
  const Vec3 t{0.5, 0.25, -1.0};
  PointSet q = p;
  for (auto& x : q.coords) x = x + t;
  EXPECT_EQ(total_loss(p, FlowField(40, t), q, LabelSet{}, LossWeights{}), 0.0);
}

TEST(TotalLoss, RejectsBadWeights) {
  LossWeights w;
  w.alpha = 0.0;
  w.beta = 0.0;
  EXPECT_THROW(w.validate(), ContractError);
  w.beta = -1.0;
  EXPECT_THROW(w.validate(), ContractError);
}

}  // namespace
}  // namespace ssflow
