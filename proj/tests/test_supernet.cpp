// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace bpnas;

namespace {

Tensor logits_of(Supernet& sn, const Tensor& x, const std::vector<std::vector<double>>* p = nullptr) {
  Tape t;
  return sn.forward(t, x, Bind::none, p).logits.value();
}

std::vector<std::vector<double>> one_hot(const Supernet& sn, const std::vector<std::size_t>& pick) {
  std::vector<std::vector<double>> p;
  for (std::size_t i = 0; i < sn.edges.size(); ++i) {
    p.emplace_back(sn.edges[i].size(), 0.0);
    p.back()[pick[i]] = 1.0;
  }
  return p;
}

}  // namespace

TEST(Importance, Examples) {
  auto p = importance_factors(Tensor::vector({0, 0, 0}));
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  auto q = importance_factors(Tensor::vector({1, 0}));
  EXPECT_NEAR(q[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  EXPECT_NEAR(q[1], 1.0 / (std::exp(1.0) + 1.0), 1e-15);
  auto a = importance_factors(Tensor::vector({2.5, 2.5}));
  auto b = importance_factors(Tensor::vector({2.5 + 40.0, 2.5 + 40.0}));
  EXPECT_EQ(a, b);
  auto big = importance_factors(Tensor::vector({1000.0, 0.0}));
  EXPECT_TRUE(std::isfinite(big[1]));
}

TEST(Supernet, ShiftInvariance) {
  auto t = make_toy_supernet(3);
  auto p0 = t.sn.importance();
  auto y0 = logits_of(t.sn, t.batch.x);
  auto s0 = sample_mixed_precision(t.sn);
  for (auto& e : t.sn.edges)
    for (std::size_t j = 0; j < e.theta.value.size(); ++j) e.theta.value[j] += 3.75;
  auto p1 = t.sn.importance();
  for (std::size_t i = 0; i < p0.size(); ++i)
    for (std::size_t j = 0; j < p0[i].size(); ++j) EXPECT_NEAR(p0[i][j], p1[i][j], 1e-12);
  auto y1 = logits_of(t.sn, t.batch.x);
  for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 1e-12);
  EXPECT_EQ(s0, sample_mixed_precision(t.sn));
}

TEST(Supernet, ArgmaxInvariantUnderMonotoneMap) {
  auto t = make_toy_supernet(4);
  auto s0 = sample_mixed_precision(t.sn);
  for (auto& e : t.sn.edges)
    for (std::size_t j = 0; j < e.theta.value.size(); ++j) e.theta.value[j] = std::exp(e.theta.value[j]) * 2.0 - 1.0;
  EXPECT_EQ(s0, sample_mixed_precision(t.sn));
}

TEST(Supernet, OneHotMixtureEqualsExportBitExactly) {
  auto t = make_toy_supernet(5);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t i = 0; i < 2; ++i) t.sn.edges[i].theta.value.fill(0.0);
      t.sn.edges[0].theta.value[a] = 5.0;
      t.sn.edges[1].theta.value[b] = 5.0;
      auto p = one_hot(t.sn, {a, b});
      auto mixed = logits_of(t.sn, t.batch.x, &p);
      QuantNet q = export_sampled(t.sn);
      Tape tape;
      EXPECT_EQ(q.forward(tape, t.batch.x, false).value(), mixed);
      EXPECT_EQ(q.assignment(), sample_mixed_precision(t.sn));
      EXPECT_EQ(average_bit(t.sn.net, q.assignment()), expected_cost(t.sn.net, p));
      for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(q.layers[i].weight.value, t.sn.edges[i].weight.value);
    }
}

TEST(Supernet, IdenticalCandidatesMixToSameOutput) {
  NetworkSpec net;
  net.layers = {LayerSpec::linear(2, 4), LayerSpec::linear(4, 3)};
  net.candidates = {{{3, 3}, {3, 3}}, {{2, 4}, {2, 4}, {2, 4}}};
  Checkpoint ck = init_checkpoint(net, 9);
  Rng rng(2);
  Tensor x = bpnas::testing::random_tensor({6, 2}, rng);
  Supernet sn = Supernet::build(net, ck, {false, true}, {1.0, 1.5});
  auto single = one_hot(sn, {0, 0});
  auto ref = logits_of(sn, x, &single);
  std::vector<std::vector<double>> p = {{0.3, 0.7}, {0.2, 0.5, 0.3}};
  auto y = logits_of(sn, x, &p);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Supernet, ImportanceLengthMismatchIsShapeError) {
  auto t = make_toy_supernet(1);
  std::vector<std::vector<double>> p = {{0.5, 0.5}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  Tape tape;
  EXPECT_THROW(t.sn.forward(tape, t.batch.x, Bind::none, &p), ShapeError);
}

TEST(Sample, ArgmaxAndTieRule) {
  std::vector<QuantPair> c = {{4, 4}, {2, 2}};
  EXPECT_EQ(select_candidate({0.9, 0.1}, c), 0u);
  EXPECT_EQ(select_candidate({0.5, 0.5}, c), 1u);
  std::vector<QuantPair> d = {{2, 4}, {4, 2}, {8, 8}};
  EXPECT_EQ(select_candidate({0.4, 0.4, 0.2}, d), 0u);  // equal products: lower index
}

TEST(Sample, ThreeLayerOneHots) {
  NetworkSpec net;
  net.layers = {LayerSpec::linear(2, 3), LayerSpec::linear(3, 3), LayerSpec::linear(3, 2)};
  net.candidates.assign(3, {{2, 2}, {3, 3}, {4, 4}});
  Supernet sn = Supernet::build(net, init_checkpoint(net, 1), {false, true, true}, {1, 1, 1});
  const std::size_t pick[3] = {2, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) sn.edges[i].theta.value[pick[i]] = 50.0;
  auto mp = sample_mixed_precision(sn);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(mp[i], net.candidates[i][pick[i]]);
}

TEST(Supernet, BuildStartsUniformWithSharedWeights) {
  auto t = make_toy_supernet(2);
  Supernet sn = Supernet::build(t.sn.net, init_checkpoint(t.sn.net, 1), {false, true}, {1.0, 1.0});
  for (const auto& p : sn.importance())
    for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_NEAR(expected_cost(sn.net, sn.importance()), std::sqrt((4.0 + 9.0 + 16.0) / 3.0), 1e-12);
}

TEST(SupernetGradient, ThetaMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto r = check_supernet_theta_gradient(seed);
    EXPECT_TRUE(r.pass) << r.detail;
  }
  EXPECT_FALSE(check_supernet_theta_gradient(1, Fault::theta_sign).pass);
}

TEST(SupernetGradient, WeightsMatchFiniteDifferences) {
  auto r = check_supernet_weight_gradient(1);
  EXPECT_TRUE(r.pass) << r.max_error;
}
