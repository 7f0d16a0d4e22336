// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace bpnas;
using bpnas::testing::random_tensor;

TEST(QuantizeWeight, Examples) {
  EXPECT_EQ(quantize_weight(0.6, 2, 1.0), 1.0);
  EXPECT_EQ(quantize_weight(5.0, 3, 1.0), 1.0);
  for (int b : {2, 3, 4, 8})
    for (double a : {0.1, 1.0, 7.5}) EXPECT_EQ(quantize_weight(0.0, b, a), 0.0);
}

TEST(QuantizeActivation, Examples) {
  EXPECT_EQ(quantize_activation(-0.3, 2, 1.0), 0.0);
  EXPECT_EQ(quantize_activation(-0.3, 5, 1.0), 0.0);
  EXPECT_NEAR(quantize_activation(0.5, 2, 1.0), 2.0 / 3.0, 1e-15);
  for (int a : {2, 3, 4, 8}) EXPECT_EQ(quantize_activation(1.7, a, 1.7), 1.7);
}

TEST(Quantize, RoundHalfToEven) {
  // 1.5 steps -> 2, 2.5 steps -> 2
  EXPECT_NEAR(quantize_activation(0.5, 2, 1.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(quantize_activation(2.5 / 7.0, 3, 1.0), 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(quantize_weight(0.5, 3, 1.0) * 3.0, 2.0, 1e-12);  // s = 1/3, 1.5 -> 2
}

TEST(Quantize, DomainErrors) {
  EXPECT_THROW(quantize_weight(0.1, 1, 1.0), Error);
  EXPECT_THROW(quantize_activation(0.1, 1, 1.0), Error);
  EXPECT_THROW(quantize_weight(0.1, 2, 0.0), Error);
  EXPECT_THROW(quantize_weight(Tensor::vector({std::nan("")}), 3, 1.0), Error);
  EXPECT_THROW(quantize_activation(Tensor::vector({INFINITY}), 3, 1.0), Error);
}

class QuantizeProperties : public ::testing::TestWithParam<int> {};

TEST_P(QuantizeProperties, GridIdempotenceSymmetryLevels) {
  Rng rng(static_cast<std::uint64_t>(GetParam()));
  const int b = 2 + GetParam() % 5;
  const double alpha = 0.2 + 2.0 * rng.uniform();
  Tensor w = random_tensor({400}, rng, alpha);
  Tensor q = quantize_weight(w, b, alpha);
  const double s = alpha / (std::ldexp(1.0, b - 1) - 1.0);
  std::set<double> levels(q.data().begin(), q.data().end());
  EXPECT_LE(levels.size(), static_cast<std::size_t>(std::ldexp(1.0, b) - 1));
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_LE(std::abs(q[i]), alpha + 1e-15);
    const double k = q[i] / s;
    EXPECT_NEAR(k, std::round(k), 1e-9);
    EXPECT_EQ(quantize_weight(q[i], b, alpha), q[i]);
    EXPECT_EQ(quantize_weight(-w[i], b, alpha), -q[i]);
  }
  Tensor x = random_tensor({400}, rng, alpha);
  Tensor qa = quantize_activation(x, b, alpha);
  std::set<double> alevels(qa.data().begin(), qa.data().end());
  EXPECT_LE(alevels.size(), static_cast<std::size_t>(std::ldexp(1.0, b)));
  for (std::size_t i = 0; i < qa.size(); ++i) {
    EXPECT_GE(qa[i], 0.0);
    EXPECT_LE(qa[i], alpha);
  }
  // monotone
  std::vector<double> xs(x.data().begin(), x.data().end());
  std::sort(xs.begin(), xs.end());
  for (std::size_t i = 1; i < xs.size(); ++i)
    EXPECT_LE(quantize_activation(xs[i - 1], b, alpha), quantize_activation(xs[i], b, alpha));
}

INSTANTIATE_TEST_SUITE_P(Random, QuantizeProperties, ::testing::Range(1, 21));

TEST(Ste, WeightRules) {
  EXPECT_EQ(ste_weight_grad(0.3, 1.0), std::make_pair(1.0, 0.0));
  EXPECT_EQ(ste_weight_grad(-1.0, 1.0), std::make_pair(0.0, -1.0));
  EXPECT_EQ(ste_weight_grad(-3.0, 1.0), std::make_pair(0.0, -1.0));
  EXPECT_EQ(ste_weight_grad(2.0, 1.0), std::make_pair(0.0, 1.0));
}

TEST(Ste, ActivationRules) {
  EXPECT_EQ(ste_activation_grad(0.3, 1.0), std::make_pair(1.0, 0.0));
  EXPECT_EQ(ste_activation_grad(1.5, 1.0), std::make_pair(0.0, 1.0));
  EXPECT_EQ(ste_activation_grad(-0.5, 1.0), std::make_pair(0.0, 0.0));
}

TEST(Ste, TapeGradientsFollowRules) {
  Tape t;
  Var w = t.variable(Tensor::vector({0.3, -2.0, 2.0}));
  Var a = t.variable(Tensor::scalar(1.0));
  t.backward(sum(fake_quant_weight(w, a, 3)));
  EXPECT_EQ(t.grad(w).values(), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(t.grad(a)[0], 0.0);  // +1 and -1 cancel
  Tape u;
  Var x = u.variable(Tensor::vector({0.3, 2.0, -1.0}));
  Var b = u.variable(Tensor::scalar(1.0));
  u.backward(sum(fake_quant_activation(x, b, 2)));
  EXPECT_EQ(u.grad(x).values(), (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(u.grad(b)[0], 1.0);
}

TEST(ClipRelu, Examples) {
  EXPECT_EQ(clip_relu(Tensor::vector({-1, 0.5, 9}), 1.0).values(), (std::vector<double>{0, 0.5, 1}));
  EXPECT_EQ(clip_relu(Tensor::vector({0}), 1.0)[0], 0.0);
}

TEST(ClipRelu, GradientAwayFromKinks) {
  Tensor x = Tensor::vector({-0.7, 0.2, 0.6, 1.9, 3.0});
  auto r = grad_check([](Tape& t, Var v) { return sum(mul(clip_relu(v, t.constant(Tensor::scalar(1.2))), v)); }, x, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-6);
  auto ra = grad_check([&](Tape& t, Var a) { return sum(mul(clip_relu(t.constant(x), a), t.constant(x))); },
                       Tensor::scalar(1.2), 1e-5);
  EXPECT_LT(ra.max_rel_error, 1e-6);
}

TEST(ClipParam, ReprojectKeepsPositive) {
  ClipParam c(0.5);
  c.alpha.value[0] = -3.0;
  c.reproject();
  EXPECT_GT(c.value(), 0.0);
}

TEST(ReshapeClip, Examples) {
  auto a = reshape_clip(Tensor::vector({1, -1, 1, -1}), 2.0);
  EXPECT_EQ(a.threshold, 2.0);
  EXPECT_EQ(a.weights.values(), (std::vector<double>{1, -1, 1, -1}));
  auto b = reshape_clip(Tensor::vector({10, 0, 0, 0}), 2.0);
  EXPECT_EQ(b.threshold, 5.0);
  EXPECT_EQ(b.weights.values(), (std::vector<double>{5, 0, 0, 0}));
  auto c = reshape_clip(Tensor::vector({0, 0, 0}), 2.0);
  EXPECT_TRUE(c.degenerate);
  EXPECT_EQ(c.weights.values(), (std::vector<double>{0, 0, 0}));
  EXPECT_THROW(reshape_clip(Tensor::vector({1}), 0.0), Error);
}

TEST(ReshapeClip, ContractionProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor w = random_tensor({64}, rng, 0.5);
    w[0] = 5.0;  // heavy tail
    auto r = reshape_clip(w, 2.0);
    const double in_max = max_abs(w), out_max = max_abs(r.weights);
    EXPECT_LE(out_max, in_max);
    EXPECT_LE(out_max, r.threshold);
    for (std::size_t i = 0; i < w.size(); ++i)
      if (std::abs(w[i]) < r.threshold) {
        EXPECT_EQ(r.weights[i], w[i]);
      }
  }
}

TEST(ReshapeClip, InfiniteKIsIdentity) {
  Rng rng(8);
  Tensor w = random_tensor({32}, rng);
  EXPECT_EQ(reshape_clip(w, INFINITY).weights, w);
}
