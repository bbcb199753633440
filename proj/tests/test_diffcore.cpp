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

#include "ssflow/diffcore.hpp"
#include "ssflow/gradcheck.hpp"
#include "test_util.hpp"

namespace ssflow {
namespace {

using ad::Tensor;
using testing::random_matrix;

TEST(Tensor, ShapeHelpers) {
  Tensor m = Tensor::matrix(2, 3, 1.5);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(ad::shape_string(m.shape), "[2x3]");
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(m.item(), ContractError);
}

TEST(Tape, MatmulMatchesLoop) {
  Rng rng = make_rng(3, "t");
  const Tensor a = random_matrix(rng, 4, 5), b = random_matrix(rng, 5, 3);
  ad::Tape tape;
  const Tensor c = ad::matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-14);
    }
  }
  EXPECT_THROW(ad::matmul(tape.constant(a), tape.constant(a)), DimensionError);
}

TEST(Tape, LinearIsRowTimesWeightTranspose) {
  Rng rng = make_rng(4, "t");
  const Tensor x = random_matrix(rng, 3, 4), w = random_matrix(rng, 2, 4);
  Tensor bias(ad::Shape{2}, {0.5, -0.25});
  ad::Tape tape;
  const Tensor y = ad::linear(tape.constant(x), tape.constant(w), tape.constant(bias)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t o = 0; o < 2; ++o) {
      double s = bias.data[o];
      for (std::size_t k = 0; k < 4; ++k) s += x(i, k) * w(o, k);
      EXPECT_NEAR(y(i, o), s, 1e-14);
    }
  }
}

TEST(Tape, Activations) {
  ad::Tape tape;
  Tensor x(ad::Shape{1, 4}, {-2.0, -0.0, 0.5, 3.0});
  const Var v = tape.constant(x);
  const Tensor leaky = ad::activate(v, ad::Activation::kLeakyRelu).value();
  const Tensor relu = ad::activate(v, ad::Activation::kRelu).value();
  const Tensor th = ad::activate(v, ad::Activation::kTanh).value();
  EXPECT_DOUBLE_EQ(leaky.data[0], -2.0 * ad::kLeakySlope);
  EXPECT_DOUBLE_EQ(leaky.data[3], 3.0);
  EXPECT_EQ(relu.data[0], 0.0);
  EXPECT_EQ(relu.data[2], 0.5);
  EXPECT_DOUBLE_EQ(th.data[2], std::tanh(0.5));
}

TEST(Tape, ProductRuleGradient) {
  Rng rng = make_rng(5, "t");
  ad::ParamStore store;
  store.add("a", random_matrix(rng, 3, 2));
  store.add("b", random_matrix(rng, 3, 2));
  ad::Tape tape;
  Var a = tape.parameter(store, "a"), b = tape.parameter(store, "b");
  tape.backward(ad::sum(ad::mul(a, b)));
  EXPECT_EQ(store.at("a").grad.data, store.at("b").value.data);
  EXPECT_EQ(store.at("b").grad.data, store.at("a").value.data);
}

TEST(Tape, SharedInputAccumulatesGradient) {
  ad::ParamStore store;
  store.add("x", Tensor(ad::Shape{1, 2}, {1.0, -2.0}));
  ad::Tape tape;
  Var x = tape.parameter(store, "x");
  tape.backward(ad::sum(ad::add(ad::scale(x, 3.0), x)));
  EXPECT_EQ(store.at("x").grad.data, (std::vector<double>{4.0, 4.0}));
}

TEST(Tape, GatherRowsScattersGradient) {
  ad::ParamStore store;
  store.add("x", Tensor::matrix(3, 2, 1.0));
  ad::Tape tape;
  Var g = ad::gather_rows(tape.parameter(store, "x"), {2, 0, 2});
  EXPECT_EQ(g.rows(), 3u);
  tape.backward(ad::sum(g));
  EXPECT_EQ(store.at("x").grad.data, (std::vector<double>{1, 1, 0, 0, 2, 2}));
}

TEST(Tape, SoftmaxRowsWithMask) {
  const double inf = std::numeric_limits<double>::infinity();
  ad::Tape tape;
  Tensor s(ad::Shape{2, 3}, {1.0, 2.0, -inf, 1000.0, 1000.0, 1000.0});
  const Tensor p = ad::softmax_rows(tape.constant(s)).value();
  const double e = std::exp(1.0);
  EXPECT_NEAR(p(0, 0), 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(p(0, 1), e / (1.0 + e), 1e-15);
  EXPECT_EQ(p(0, 2), 0.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(p(1, c), 1.0 / 3.0, 1e-15);
}

TEST(Tape, SegmentMaxEmptySegmentIsZero) {
  ad::ParamStore store;
  store.add("x", Tensor(ad::Shape{3, 2}, {1.0, 5.0, 4.0, -1.0, 2.0, 7.0}));
  ad::Tape tape;
  Var m = ad::segment_max(tape.parameter(store, "x"), {0, 2, 2, 3});
  EXPECT_EQ(m.value().data, (std::vector<double>{4.0, 5.0, 0.0, 0.0, 2.0, 7.0}));
  tape.backward(ad::sum(m));
  EXPECT_EQ(store.at("x").grad.data, (std::vector<double>{0, 1, 1, 0, 1, 1}));
}

TEST(Tape, EdgeMaxPoolMatchesNaive) {
  Rng rng = make_rng(6, "t");
  const std::size_t n = 5, w = 4;
  const Tensor a = random_matrix(rng, n, w), b = random_matrix(rng, n, w), wp = random_matrix(rng, w, 3);
  const Tensor bias = random_matrix(rng, 1, w);
  const std::vector<std::size_t> center{0, 0, 1, 3, 3, 3}, neighbor{1, 4, 2, 0, 3, 4}, offsets{0, 2, 3, 3, 6};
  const Tensor delta = random_matrix(rng, center.size(), 3);
  for (auto act : {ad::Activation::kLeakyRelu, ad::Activation::kTanh}) {
    ad::Tape tape;
    const Tensor out = ad::edge_max_pool(tape.constant(a), tape.constant(b), tape.constant(delta), tape.constant(wp),
                                         tape.constant(bias), center, neighbor, offsets, act)
                           .value();
    ASSERT_EQ(out.rows(), 4u);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      for (std::size_t k = 0; k < w; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) {
          double pre = a(center[e], k) + b(neighbor[e], k) + bias.data[k];
          for (int c = 0; c < 3; ++c) pre += wp(k, c) * delta(e, c);
          const double y = act == ad::Activation::kTanh ? std::tanh(pre) : (pre > 0 ? pre : ad::kLeakySlope * pre);
          best = std::max(best, y);
        }
        const double expect = offsets[s] == offsets[s + 1] ? 0.0 : best;
        EXPECT_NEAR(out(s, k), expect, 1e-14) << "segment " << s << " column " << k;
      }
    }
  }
}

TEST(Tape, PairDiffActivateMatchesComposition) {
  Rng rng = make_rng(7, "t");
  const Tensor a = random_matrix(rng, 3, 2), b = random_matrix(rng, 4, 2), bias = random_matrix(rng, 1, 2);
  ad::Tape tape;
  const Tensor fused =
      ad::pair_diff_activate(tape.constant(a), tape.constant(b), tape.constant(bias), ad::Activation::kLeakyRelu)
          .value();
  ASSERT_EQ(fused.rows(), 12u);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t k = 0; k < 2; ++k) {
        const double pre = a(i, k) - b(j, k) + bias.data[k];
        EXPECT_NEAR(fused(i * 4 + j, k), pre > 0 ? pre : ad::kLeakySlope * pre, 1e-15);
      }
    }
  }
}

TEST(Tape, RowNormsAndReductions) {
  ad::Tape tape;
  Tensor x(ad::Shape{2, 2}, {3.0, 4.0, 0.0, 0.0});
  Var v = tape.constant(x);
  EXPECT_EQ(ad::row_norms(v).value().data, (std::vector<double>{5.0, 0.0}));
  EXPECT_EQ(ad::sum(v).value().item(), 7.0);
  EXPECT_EQ(ad::sum_squares(v).value().item(), 25.0);
  EXPECT_EQ(ad::weighted_sum(v, Tensor(ad::Shape{4}, {1, 2, 3, 4})).value().item(), 11.0);
}

TEST(Tape, ZeroNormRowHasZeroGradient) {
  ad::ParamStore store;
  store.add("x", Tensor::matrix(1, 3));
  ad::Tape tape;
  tape.backward(ad::sum(ad::row_norms(tape.parameter(store, "x"))));
  for (double g : store.at("x").grad.data) EXPECT_EQ(g, 0.0);
}

TEST(Tape, MixingTapesIsRejected) {
  ad::Tape t1, t2;
  Var a = t1.constant(Tensor::matrix(1, 1)), b = t2.constant(Tensor::matrix(1, 1));
  EXPECT_THROW(ad::add(a, b), ContractError);
}

TEST(Adam, SingleStepMatchesFormula) {
  ad::ParamStore store;
  store.add("w", Tensor(ad::Shape{2}, {1.0, -1.0}));
  store.at("w").grad = Tensor(ad::Shape{2}, {0.5, -2.0});
  ad::AdamOptions opt;
  ad::adam_step(store, opt);
  // First step: m_hat = g, v_hat = g^2.
  for (std::size_t i = 0; i < 2; ++i) {
    const double g = i == 0 ? 0.5 : -2.0;
    const double start = i == 0 ? 1.0 : -1.0;
    EXPECT_NEAR(store.at("w").value.data[i], start - opt.lr * g / (std::abs(g) + opt.eps), 1e-15);
  }
  EXPECT_EQ(store.step(), 1u);
}

TEST(Adam, NonFiniteGradientThrows) {
  ad::ParamStore store;
  store.add("w", Tensor(ad::Shape{1}, {1.0}));
  store.at("w").grad.data[0] = std::nan("");
  EXPECT_THROW(ad::adam_step(store, {}), NumericError);
}

TEST(Checkpoint, RoundTripIsByteExact) {
  Rng rng = make_rng(8, "t");
  ad::ParamStore store;
  store.add("layer.weight", random_matrix(rng, 3, 4));
  store.add("layer.bias", Tensor(ad::Shape{3}, {0.1, 0.2, 0.3}));
  std::ostringstream a;
  ad::save_checkpoint(store, a);
  std::istringstream in(a.str());
  const ad::ParamStore back = ad::load_checkpoint(in);
  EXPECT_TRUE(back.same_values(store));
  std::ostringstream b;
  ad::save_checkpoint(back, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  ad::ParamStore model, other;
  model.add("w", Tensor::matrix(2, 2));
  other.add("w", Tensor::matrix(2, 3));
  EXPECT_THROW(ad::assign_values(model, other), ArtifactMismatch);
  std::istringstream bad("XXXX");
  EXPECT_THROW(ad::load_checkpoint(bad), FormatError);
}

TEST(Mlp, ForwardMatchesManual) {
  Rng rng = make_rng(9, "t");
  const auto spec = ad::MlpSpec::make({3, 4, 2});
  ad::ParamStore store;
  ad::init_mlp(store, spec, "m", rng);
  const Tensor x = random_matrix(rng, 5, 3);
  const Tensor y = ad::forward_mlp(spec, store, "m", x);
  const auto& w0 = store.at(ad::mlp_weight_name("m", 0)).value;
  const auto& b0 = store.at(ad::mlp_bias_name("m", 0)).value;
  const auto& w1 = store.at(ad::mlp_weight_name("m", 1)).value;
  const auto& b1 = store.at(ad::mlp_bias_name("m", 1)).value;
  for (std::size_t r = 0; r < 5; ++r) {
    std::vector<double> h(4);
    for (std::size_t o = 0; o < 4; ++o) {
      double s = b0.data[o];
      for (std::size_t k = 0; k < 3; ++k) s += w0(o, k) * x(r, k);
      h[o] = s > 0 ? s : ad::kLeakySlope * s;
    }
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b1.data[o];
      for (std::size_t k = 0; k < 4; ++k) s += w1(o, k) * h[k];
      EXPECT_NEAR(y(r, o), s, 1e-14);
    }
  }
}

TEST(Mlp, GlorotBounds) {
  Rng rng = make_rng(10, "t");
  const Tensor w = ad::glorot_uniform(30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : w.data) EXPECT_LE(std::abs(v), bound);
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_EQ(gradient_rel_error({0, 0}, {0, 0}), 0.0);
  EXPECT_NEAR(gradient_rel_error({3, 4}, {3, 4.5}), 0.5 / std::sqrt(9 + 20.25), 1e-15);
}

TEST(Gradcheck, CorruptedGradientIsCaught) {
  auto cases = gradcheck_cases(2);
  GradcheckOptions opt;
  for (auto& c : cases) {
    if (c.name != "linear") continue;
    EXPECT_TRUE(run_gradcheck_case(c, opt).passed);
    opt.corrupt = "linear";
    const auto r = run_gradcheck_case(c, opt);
    EXPECT_FALSE(r.passed);
    EXPECT_NEAR(r.rel_error, 0.01 / 1.01, 1e-5);
    return;
  }
  FAIL() << "no linear case";
}

}  // namespace
}  // namespace ssflow
