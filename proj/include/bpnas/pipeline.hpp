// SPDX-License-Identifier: Apache-2.0
//
// End-to-end run: reshaped float pretraining -> supernet search -> export ->
// quantized retraining.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bpnas/data.hpp"
#include "bpnas/model.hpp"
#include "bpnas/search.hpp"
#include "bpnas/supernet.hpp"

namespace bpnas {

struct Experiment {
  NetworkSpec net;
  std::vector<bool> quantize_input;  // empty: all layers except the first
  AlphaInit alpha_init{};
  TrainConfig pretrain{};
  double reshape_k = 2.0;
  SearchConfig search{};
  TrainConfig retrain{};
  bool warm_start = false;  // retrain from supernet weights instead of the float checkpoint
  std::size_t calibration_samples = 256;

  std::vector<bool> input_quantization() const {
    return quantize_input.empty() ? default_quantize_input(net.size()) : quantize_input;
  }
};

inline Checkpoint pretrain(const Experiment& ex, const Dataset& ds, std::uint64_t seed) {
  return pretrain_reshaped(ex.net, ds, ex.pretrain, ex.reshape_k, seed);
}

/// Activation clip initial values: fixed, or the per-layer maximum on a
/// calibration slice of the training split.
inline std::vector<double> activation_alphas(const Experiment& ex, const Checkpoint& ck, const Dataset& ds) {
  if (ex.alpha_init.activation) return std::vector<double>(ex.net.size(), *ex.alpha_init.activation);
  auto idx = ds.indices(Split::train);
  idx.resize(std::min(idx.size(), ex.calibration_samples));
  return calibrate_activation_alphas(ex.net, ck, ds.gather(idx).x);
}

inline Supernet build_supernet(const Experiment& ex, const Checkpoint& ck, const Dataset& ds) {
  return Supernet::build(ex.net, ck, ex.input_quantization(), activation_alphas(ex, ck, ds));
}

/// Fixed-assignment network initialised from the float checkpoint.
inline QuantNet make_retrain_net(const Experiment& ex, const Checkpoint& ck, const MixedPrecisionAssignment& mp,
                                 const Dataset& ds) {
  return make_quant_net(ex.net, ck, mp, ex.input_quantization(), activation_alphas(ex, ck, ds));
}

struct PipelineResult {
  Checkpoint checkpoint;
  SearchReport report;
  std::optional<TrainResult> retrain;
};

/// Runs the whole pipeline with every stochastic stage derived from seed.
inline PipelineResult run_pipeline(const Experiment& ex, const Dataset& ds, std::uint64_t seed, bool retrain = true,
                                   const Checkpoint* shared_checkpoint = nullptr) {
  PipelineResult res;
  res.checkpoint = shared_checkpoint ? *shared_checkpoint : pretrain(ex, ds, seed);
  Supernet sn = build_supernet(ex, res.checkpoint, ds);
  SearchConfig sc = ex.search;
  sc.seed = seed;
  res.report = run_search(sn, ds, sc);
  if (retrain) {
    QuantNet net = ex.warm_start ? export_sampled(sn) : make_retrain_net(ex, res.checkpoint, res.report.assignment, ds);
    res.retrain = retrain_sampled(net, ds, ex.retrain, seed);
    if (!res.retrain->diverged) res.report.retrained_accuracy = res.retrain->accuracy;
  }
  return res;
}

}  // namespace bpnas
