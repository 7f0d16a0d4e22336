// SPDX-License-Identifier: Apache-2.0
//
// Bilevel search: weight steps on the training split, architecture steps on
// the validation split, then argmax sampling, plus the float pretraining
// (with distribution reshaping) and quantized retraining around it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bpnas/costmodel.hpp"
#include "bpnas/data.hpp"
#include "bpnas/log.hpp"
#include "bpnas/model.hpp"
#include "bpnas/optim.hpp"
#include "bpnas/regularizers.hpp"
#include "bpnas/supernet.hpp"

namespace bpnas {

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

enum class SearchMode { bp_nas, lambda_baseline };

inline const char* to_string(SearchMode m) { return m == SearchMode::bp_nas ? "bp_nas" : "lambda_baseline"; }

/// Plain supervised training schedule (pretraining and retraining).
struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double alpha_decay = 1e-4;
  double alpha_lr_scale = 0.01;  // clip values step at lr * alpha_lr_scale
};

struct SearchConfig {
  BarrierConfig barrier{};  // barrier.b_max is the budget
  int epochs = 30;
  std::size_t batch_size = 64;
  double weight_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double alpha_decay = 1e-4;
  double alpha_lr_scale = 0.01;
  double arch_lr = 0.05;
  double arch_beta1 = 0.9;
  double arch_beta2 = 0.999;
  double arch_grad_clip = 1.0;  // joint L2 norm cap on the theta gradient; <= 0 disables
  int weight_steps_per_arch_step = 1;
  double warmup_fraction = 0.2;
  double val_coefficient = 1.0;
  double barrier_coefficient = 1.0;
  double prob1_coefficient = 1.0;
  SearchMode mode = SearchMode::bp_nas;
  double lambda = 1e-3;
  std::uint64_t seed = 1;

  double b_max() const { return barrier.b_max; }
  int warmup_epochs() const { return static_cast<int>(std::floor(warmup_fraction * epochs)); }

  /// Barrier weight for a search epoch. The schedule clock starts when
  /// architecture steps start; span 0 stretches it over the remaining epochs.
  double mu_at(int epoch) const {
    BarrierConfig b = barrier;
    const int warmup = warmup_epochs();
    if (b.schedule.span_epochs == 0) b.schedule.span_epochs = std::max(1, epochs - warmup - 1);
    return mu_at_epoch(std::max(0, epoch - warmup), b);
  }

  void validate() const {
    barrier.validate();
    if (epochs < 1) throw Error("search: epochs must be >= 1");
    if (batch_size < 1) throw Error("search: batch_size must be >= 1");
    if (weight_steps_per_arch_step < 1) throw Error("search: weight_steps_per_arch_step must be >= 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw Error("search: warmup_fraction must lie in [0,1)");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double expected_cost = 0.0;
  double barrier = 0.0;
  double prob1 = 0.0;
  double mu = 0.0;
  int arch_steps = 0;
  int guard_steps = 0;  // arch steps taken with E in the guard region
  std::vector<std::vector<double>> p;
};

struct SearchReport {
  SearchMode mode = SearchMode::bp_nas;
  std::uint64_t seed = 0;
  double b_max = 0.0;
  std::vector<EpochRecord> epochs;
  MixedPrecisionAssignment assignment;
  double average_bit = 0.0;
  bool feasible = false;
  std::optional<double> retrained_accuracy;
  std::string aborted;  // non-empty: diagnostic of the step that stopped the search
};

// Batching ---------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> idx, std::size_t batch, Rng& rng) {
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < idx.size(); s += batch)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + batch)));
  return out;
}

inline double finite_loss(double v, const char* where) {
  if (!std::isfinite(v)) throw NonFiniteLoss(std::string(where) + ": non-finite loss");
  return v;
}

// Search steps ---------------------------------------------------------------------

/// One optimizer step on the shared weights, biases and clip values using
/// the training loss. Theta is read as a constant.
inline double weight_step(Supernet& sn, const Batch& batch, MomentumSgd& opt, const SearchConfig& cfg, double lr) {
  auto groups = sn.weight_groups(cfg.weight_decay, cfg.alpha_decay, cfg.alpha_lr_scale);
  zero_grads(groups);
  Tape tape;
  auto out = sn.forward(tape, batch.x, Bind::weights);
  Var loss = cross_entropy(out.logits, batch.y);
  finite_loss(loss.item(), "weight_step");
  tape.backward(loss);
  opt.step(groups, lr);
  sn.reproject_alphas();
  return loss.item();
}

struct ArchLoss {
  Var total;
  Var val;
  Var cost;  // expected cost E
  Var penalty;
  Var prob1;
};

/// L2 = L_val + barrier(E) + Prob-1 (bp_nas) or L_val + lambda * E (baseline),
/// differentiable in theta only.
inline ArchLoss arch_loss(Tape& tape, Supernet& sn, const Batch& batch, const SearchConfig& cfg, double mu) {
  auto out = sn.forward(tape, batch.x, Bind::arch);
  ArchLoss l;
  l.val = cross_entropy(out.logits, batch.y);
  l.cost = expected_cost(tape, sn.net, out.p);
  l.prob1 = prob1(tape, out.p);
  Var total = mul_scalar(l.val, cfg.val_coefficient);
  if (cfg.mode == SearchMode::bp_nas) {
    BarrierConfig b = cfg.barrier;
    b.mu = mu;
    l.penalty = barrier_penalty(l.cost, b);
    total = add(total, mul_scalar(l.penalty, cfg.barrier_coefficient));
    if (cfg.prob1_coefficient != 0.0) total = add(total, mul_scalar(l.prob1, cfg.prob1_coefficient));
  } else {
    l.penalty = mul_scalar(l.cost, cfg.lambda);
    total = add(total, l.penalty);
  }
  l.total = total;
  return l;
}

struct ArchStepResult {
  double loss = 0.0;
  double expected_cost = 0.0;
  bool in_guard = false;
};

/// One optimizer step on theta; weights and clip values are constants.
inline ArchStepResult arch_step(Supernet& sn, const Batch& batch, Adam& opt, const SearchConfig& cfg, double mu,
                                double lr) {
  auto groups = sn.arch_groups();
  zero_grads(groups);
  Tape tape;
  ArchLoss l = arch_loss(tape, sn, batch, cfg, mu);
  finite_loss(l.total.item(), "arch_step");
  tape.backward(l.total);
  clip_grad_norm(groups, cfg.arch_grad_clip);
  opt.step(groups, lr);
  return {l.total.item(), l.cost.item(), in_guard_region(l.cost.item(), cfg.barrier)};
}

// Search loop --------------------------------------------------------------------

inline EpochRecord snapshot_epoch(Supernet& sn, const Dataset& ds, const std::vector<std::size_t>& val_idx,
                                  const SearchConfig& cfg, int epoch, double mu) {
  EpochRecord r;
  r.epoch = epoch;
  r.mu = mu;
  r.p = sn.importance();
  r.expected_cost = expected_cost(sn.net, r.p);
  BarrierConfig b = cfg.barrier;
  b.mu = mu;
  r.barrier = cfg.mode == SearchMode::bp_nas ? barrier_penalty(r.expected_cost, b) : cfg.lambda * r.expected_cost;
  r.prob1 = prob1(r.p);
  r.val_loss = evaluate(sn, ds, val_idx).loss;
  return r;
}

/// Alternates weight and architecture steps for cfg.epochs epochs, then
/// samples the argmax assignment. The first warmup_fraction of epochs runs
/// weight steps only.
inline SearchReport run_search(Supernet& sn, const Dataset& ds, const SearchConfig& cfg) {
  cfg.validate();
  SearchReport rep;
  rep.mode = cfg.mode;
  rep.seed = cfg.seed;
  rep.b_max = cfg.b_max();
  const auto train_idx = ds.indices(Split::train);
  const auto val_idx = ds.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) throw Error("run_search: empty train or val split");

  Rng rng(derive_seed(cfg.seed, 0x5ea7c4));
  MomentumSgd wopt(cfg.momentum);
  Adam aopt(cfg.arch_beta1, cfg.arch_beta2);
  const std::size_t steps_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;
  const int warmup = cfg.warmup_epochs();

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double mu = cfg.mu_at(epoch);
      auto tb = make_batches(train_idx, cfg.batch_size, rng);
      auto vb = make_batches(val_idx, cfg.batch_size, rng);
      double train_loss = 0.0;
      int arch_steps = 0, guard_steps = 0;
      for (std::size_t k = 0; k < tb.size(); ++k, ++step) {
        train_loss += weight_step(sn, ds.gather(tb[k]), wopt, cfg, cosine_lr(cfg.weight_lr, step, total_steps));
        if (epoch >= warmup && (k + 1) % static_cast<std::size_t>(cfg.weight_steps_per_arch_step) == 0) {
          auto r = arch_step(sn, ds.gather(vb[static_cast<std::size_t>(arch_steps) % vb.size()]), aopt, cfg, mu,
                             cfg.arch_lr);
          ++arch_steps;
          if (r.in_guard) ++guard_steps;
        }
      }
      EpochRecord rec = snapshot_epoch(sn, ds, val_idx, cfg, epoch, mu);
      rec.train_loss = train_loss / static_cast<double>(tb.size());
      rec.arch_steps = arch_steps;
      rec.guard_steps = guard_steps;
      if (guard_steps > 0 && epoch >= warmup)
        logging::info("epoch " + std::to_string(epoch) + ": " + std::to_string(guard_steps) + " arch steps in guard region");
      rep.epochs.push_back(std::move(rec));
    }
  } catch (const NonFiniteLoss& e) {
    rep.aborted = e.what();
    logging::warn(std::string("search aborted: ") + e.what());
  }
  rep.assignment = sample_mixed_precision(sn);
  rep.average_bit = average_bit(sn.net, rep.assignment);
  rep.feasible = rep.average_bit <= cfg.b_max();
  return rep;
}

// Pretraining and retraining ------------------------------------------------------------

struct TrainResult {
  double accuracy = 0.0;  // on the test split
  double final_loss = 0.0;
  bool diverged = false;
};

/// SGD over the train+val splits with cosine decay. after_step runs after
/// every optimizer step.
template <class AfterStep>
inline TrainResult train_supervised(QuantNet& net, const Dataset& ds, const TrainConfig& cfg, std::uint64_t seed,
                                    AfterStep after_step) {
  const auto idx = ds.indices({Split::train, Split::val});
  if (idx.empty()) throw Error("training: empty train/val splits");
  Rng rng(seed);
  MomentumSgd opt(cfg.momentum);
  const std::size_t steps_per_epoch = (idx.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(std::max(cfg.epochs, 0));
  std::size_t step = 0;
  TrainResult res;
  for (int epoch = 0; epoch < cfg.epochs && !res.diverged; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& b : make_batches(idx, cfg.batch_size, rng)) {
      auto groups = net.param_groups(cfg.weight_decay, cfg.alpha_decay, cfg.alpha_lr_scale);
      zero_grads(groups);
      Batch batch = ds.gather(b);
      Tape tape;
      Var loss = cross_entropy(net.forward(tape, batch.x, true), batch.y);
      if (!std::isfinite(loss.item())) {
        res.diverged = true;
        logging::warn("training diverged at epoch " + std::to_string(epoch));
        break;
      }
      tape.backward(loss);
      opt.step(groups, cosine_lr(cfg.lr, step++, total));
      net.reproject_alphas();
      after_step(net);
      epoch_loss += loss.item();
    }
    res.final_loss = epoch_loss / static_cast<double>(steps_per_epoch);
  }
  if (!res.diverged) res.accuracy = evaluate(net, ds, ds.indices(Split::test)).accuracy;
  return res;
}

/// Float training where every layer's weights are clipped to
/// k * mean|W| after each step. k = +inf gives plain float training.
inline Checkpoint pretrain_reshaped(const NetworkSpec& net, const Dataset& ds, const TrainConfig& cfg, double k,
                                   std::uint64_t seed) {
  if (!(k > 0.0)) throw Error("pretrain_reshaped: k must be positive");
  QuantNet qn = make_float_net(net, init_checkpoint(net, derive_seed(seed, 0x1417)));
  auto clip = [k](QuantNet& n) {
    if (std::isinf(k)) return;
    for (auto& L : n.layers) L.weight.value = reshape_clip(L.weight.value, k).weights;
  };
  clip(qn);
  train_supervised(qn, ds, cfg, derive_seed(seed, 0x9e7a), clip);
  Checkpoint ck = qn.checkpoint();
  ck.reshape_k = k;
  return ck;
}

/// Quantized training of an exported network with straight-through
/// gradients; returns test-split accuracy. Zero epochs evaluates as is.
inline TrainResult retrain_sampled(QuantNet& net, const Dataset& ds, const TrainConfig& cfg, std::uint64_t seed) {
  return train_supervised(net, ds, cfg, derive_seed(seed, 0x7e7a), [](QuantNet&) {});
}

}  // namespace bpnas
