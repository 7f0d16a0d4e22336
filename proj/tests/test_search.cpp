// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace bpnas;

namespace {

Dataset small_spirals(std::uint64_t seed = 3) {
  Dataset ds = gen_spirals(3, 60, 0.1, seed);
  assign_splits(ds, 0.48, 0.32, seed);
  return ds;
}

Experiment small_experiment() {
  Experiment ex;
  ex.net.layers = {LayerSpec::linear(2, 12), LayerSpec::linear(12, 3)};
  ex.net.candidates.assign(2, {{2, 2}, {3, 3}, {4, 4}});
  ex.pretrain.epochs = 15;
  ex.retrain.epochs = 5;
  ex.search.epochs = 6;
  ex.search.batch_size = 32;
  ex.search.barrier.b_max = 3.5;
  return ex;
}

std::vector<Tensor> snapshot_weights(const Supernet& sn) {
  std::vector<Tensor> out;
  for (const auto& e : sn.edges) {
    out.push_back(e.weight.value);
    out.push_back(e.bias.value);
    for (const auto& c : e.candidates) {
      out.push_back(c.weight_alpha.alpha.value);
      out.push_back(c.act_alpha.alpha.value);
    }
  }
  return out;
}

std::vector<Tensor> snapshot_theta(const Supernet& sn) {
  std::vector<Tensor> out;
  for (const auto& e : sn.edges) out.push_back(e.theta.value);
  return out;
}

}  // namespace

TEST(WeightStep, ZeroLearningRateLeavesWeights) {
  auto t = make_toy_supernet(1);
  MomentumSgd opt(t.cfg.momentum);
  auto w0 = snapshot_weights(t.sn);
  weight_step(t.sn, t.batch, opt, t.cfg, 0.0);
  EXPECT_EQ(w0, snapshot_weights(t.sn));
}

TEST(WeightStep, NeverTouchesTheta) {
  auto t = make_toy_supernet(2);
  MomentumSgd opt(t.cfg.momentum);
  auto th0 = snapshot_theta(t.sn);
  for (int k = 0; k < 3; ++k) weight_step(t.sn, t.batch, opt, t.cfg, 0.05);
  EXPECT_EQ(th0, snapshot_theta(t.sn));
  for (const auto& e : t.sn.edges)
    for (double g : e.theta.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(WeightStep, SmallStepDescends) {
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto t = make_toy_supernet(seed);
    t.sn.round = false;  // smooth surrogate; rounding makes tiny steps a coin flip
    MomentumSgd opt(0.0);
    const double before = weight_step(t.sn, t.batch, opt, t.cfg, 1e-3);
    Tape tape;
    const double after = cross_entropy(t.sn.forward(tape, t.batch.x, false), t.batch.y).item();
    decreased += after < before;
  }
  EXPECT_GE(decreased, 6);
}

TEST(ArchStep, NeverTouchesWeights) {
  auto t = make_toy_supernet(3);
  Adam opt;
  auto w0 = snapshot_weights(t.sn);
  auto th0 = snapshot_theta(t.sn);
  for (int k = 0; k < 3; ++k) arch_step(t.sn, t.batch, opt, t.cfg, 0.2, 0.05);
  EXPECT_EQ(w0, snapshot_weights(t.sn));
  EXPECT_NE(th0, snapshot_theta(t.sn));
}

TEST(ArchStep, ZeroLearningRateLeavesTheta) {
  auto t = make_toy_supernet(4);
  Adam opt;
  auto th0 = snapshot_theta(t.sn);
  arch_step(t.sn, t.batch, opt, t.cfg, 0.2, 0.0);
  EXPECT_EQ(th0, snapshot_theta(t.sn));
}

TEST(ArchStep, BarrierAloneLowersExpectedCost) {
  auto t = make_toy_supernet(5);
  for (auto& e : t.sn.edges) e.theta.value = Tensor::vector({0.0, 0.0, 2.0});  // lean toward 4 bits
  t.cfg.val_coefficient = 0.0;
  t.cfg.prob1_coefficient = 0.0;
  t.cfg.barrier.b_max = 4.5;  // zero point at 2.78, start near 3.8
  const double e0 = expected_cost(t.sn.net, t.sn.importance());
  Adam opt;
  for (int k = 0; k < 5; ++k) arch_step(t.sn, t.batch, opt, t.cfg, 0.5, 0.05);
  EXPECT_LT(expected_cost(t.sn.net, t.sn.importance()), e0);
}

TEST(RunSearch, DeterministicAndConsistent) {
  auto ex = small_experiment();
  auto ds = small_spirals();
  auto a = run_pipeline(ex, ds, 7, false).report;
  auto b = run_pipeline(ex, ds, 7, false).report;
  EXPECT_EQ(epochs_csv(a), epochs_csv(b));
  EXPECT_EQ(importance_jsonl(a), importance_jsonl(b));
  EXPECT_EQ(report_json(a, ex.net).dump(), report_json(b, ex.net).dump());
  ASSERT_EQ(a.epochs.size(), static_cast<std::size_t>(ex.search.epochs));
  EXPECT_EQ(a.average_bit, average_bit(ex.net, a.assignment));
  EXPECT_EQ(a.feasible, check_constraint(ex.net, a.assignment, ex.search.barrier.b_max));
  // final p snapped to one-hot reproduces the assignment's cost
  std::vector<std::vector<double>> snapped;
  for (std::size_t i = 0; i < ex.net.size(); ++i) {
    const auto& p = a.epochs.back().p[i];
    snapped.emplace_back(p.size(), 0.0);
    snapped.back()[select_candidate(p, ex.net.candidates[i])] = 1.0;
  }
  EXPECT_NEAR(expected_cost(ex.net, snapped), a.average_bit, 1e-9);
}

TEST(RunSearch, ModesDiffer) {
  auto ex = small_experiment();
  ex.search.mode = SearchMode::lambda_baseline;
  auto ds = small_spirals();
  auto r = run_pipeline(ex, ds, 2, false).report;
  EXPECT_EQ(r.mode, SearchMode::lambda_baseline);
  EXPECT_NEAR(r.epochs.back().barrier, ex.search.lambda * r.epochs.back().expected_cost, 1e-15);
}

TEST(SearchConfig, Validation) {
  SearchConfig s;
  EXPECT_NO_THROW(s.validate());
  s.epochs = 0;
  EXPECT_THROW(s.validate(), Error);
  s = SearchConfig{};
  s.warmup_fraction = 1.0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Retrain, ZeroEpochsKeepsAccuracy) {
  auto ex = small_experiment();
  auto ds = small_spirals();
  Checkpoint ck = pretrain(ex, ds, 1);
  MixedPrecisionAssignment mp{{{3, 3}, {3, 3}}};
  QuantNet net = make_retrain_net(ex, ck, mp, ds);
  const double before = evaluate(net, ds, ds.indices(Split::test)).accuracy;
  TrainConfig zero = ex.retrain;
  zero.epochs = 0;
  EXPECT_EQ(retrain_sampled(net, ds, zero, 1).accuracy, before);
}

TEST(Retrain, FloatNetSeparatesBlobs) {
  Dataset ds = gen_blobs(3, 100, 4, 0.3, 5);
  assign_splits(ds, 0.6, 0.2, 5);
  NetworkSpec net;
  net.layers = {LayerSpec::linear(4, 8), LayerSpec::linear(8, 3)};
  net.candidates.assign(2, {{32, 32}});
  QuantNet q = make_float_net(net, init_checkpoint(net, 1));
  TrainConfig cfg;
  cfg.epochs = 20;
  EXPECT_GE(retrain_sampled(q, ds, cfg, 1).accuracy, 0.95);
}

TEST(Retrain, HighBitsAtLeastLowBits) {
  auto ex = small_experiment();
  ex.net.candidates.assign(2, {{2, 2}, {8, 8}});
  ex.retrain.epochs = 10;
  auto ds = small_spirals();
  std::vector<double> lo, hi;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Checkpoint ck = pretrain(ex, ds, seed);
    QuantNet a = make_retrain_net(ex, ck, {{{2, 2}, {2, 2}}}, ds);
    QuantNet b = make_retrain_net(ex, ck, {{{8, 8}, {8, 8}}}, ds);
    lo.push_back(retrain_sampled(a, ds, ex.retrain, seed).accuracy);
    hi.push_back(retrain_sampled(b, ds, ex.retrain, seed).accuracy);
  }
  std::sort(lo.begin(), lo.end());
  std::sort(hi.begin(), hi.end());
  EXPECT_GE(hi[2], lo[2]);
}

TEST(Pretrain, ReshapedWeightsRespectThreshold) {
  auto ex = small_experiment();
  auto ds = small_spirals();
  Checkpoint ck = pretrain_reshaped(ex.net, ds, ex.pretrain, 2.0, 4);
  for (const auto& w : ck.weights) {
    double mean = 0.0;
    for (double v : w.data()) mean += std::abs(v);
    mean /= static_cast<double>(w.size());
    EXPECT_LE(max_abs(w), 2.0 * mean + 1e-6);
  }
}

TEST(Pretrain, InfiniteKIsPlainTraining) {
  auto ex = small_experiment();
  auto ds = small_spirals();
  Checkpoint a = pretrain_reshaped(ex.net, ds, ex.pretrain, INFINITY, 4);
  QuantNet q = make_float_net(ex.net, init_checkpoint(ex.net, derive_seed(4, 0x1417)));
  train_supervised(q, ds, ex.pretrain, derive_seed(4, 0x9e7a), [](QuantNet&) {});
  Checkpoint b = q.checkpoint();
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.biases, b.biases);
  EXPECT_THROW(pretrain_reshaped(ex.net, ds, ex.pretrain, 0.0, 4), Error);
}
