// SPDX-License-Identifier: Apache-2.0
//
// Soft barrier on the expected cost and the Prob-1 one-hot regularizer,
// with their hand-derived gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "bpnas/autodiff.hpp"
#include "bpnas/costmodel.hpp"

namespace bpnas {

struct MuSchedule {
  enum class Kind { constant, linear, exponential };
  Kind kind = Kind::linear;
  double start = 0.01;
  double end = 0.05;
  int span_epochs = 0;  // epochs over which start -> end is traversed; 0: the search's architecture phase
};

inline const char* to_string(MuSchedule::Kind k) {
  switch (k) {
    case MuSchedule::Kind::constant: return "constant";
    case MuSchedule::Kind::linear: return "linear";
    case MuSchedule::Kind::exponential: return "exponential";
  }
  return "?";
}

struct BarrierConfig {
  double b_max = 4.0;
  double mu = 0.1;
  double epsilon_guard = 1e-5;
  MuSchedule schedule{};

  void validate() const {
    if (!(b_max > 0.0)) throw Error("barrier: b_max must be positive");
    if (!(mu > 0.0)) throw Error("barrier: mu must be positive");
    if (!(epsilon_guard > 0.0 && epsilon_guard < b_max)) throw Error("barrier: epsilon_guard must lie in (0, b_max)");
    if (schedule.kind != MuSchedule::Kind::constant) {
      if (!(schedule.start > 0.0 && schedule.end > 0.0)) throw Error("barrier: schedule endpoints must be positive");
      if (schedule.span_epochs < 0) throw Error("barrier: schedule span must be >= 0 epochs");
    }
  }
};

namespace detail {

inline double barrier_analytic(double e, double b_max, double mu) { return -mu * std::log(std::log(b_max + 1.0 - e)); }

inline double barrier_slope(double e, double b_max, double mu) {
  const double u = b_max + 1.0 - e;
  return mu / (std::log(u) * u);
}

}  // namespace detail

/// -mu * log(log(B_max + 1 - E)) below the guard point E0 = B_max - epsilon_guard,
/// continued linearly (value and slope matched at E0) for E >= E0.
inline double barrier_penalty(double e, const BarrierConfig& cfg) {
  const double e0 = cfg.b_max - cfg.epsilon_guard;
  if (e < e0) return detail::barrier_analytic(e, cfg.b_max, cfg.mu);
  return detail::barrier_analytic(e0, cfg.b_max, cfg.mu) + detail::barrier_slope(e0, cfg.b_max, cfg.mu) * (e - e0);
}

inline double barrier_penalty_grad(double e, const BarrierConfig& cfg) {
  const double e0 = cfg.b_max - cfg.epsilon_guard;
  return detail::barrier_slope(e < e0 ? e : e0, cfg.b_max, cfg.mu);
}

inline bool in_guard_region(double e, const BarrierConfig& cfg) { return e >= cfg.b_max - cfg.epsilon_guard; }

inline Var barrier_penalty(Var e, const BarrierConfig& cfg) {
  return map(
      e, [cfg](double v) { return barrier_penalty(v, cfg); }, [cfg](double v) { return barrier_penalty_grad(v, cfg); });
}

inline double mu_at_epoch(int epoch, const BarrierConfig& cfg) {
  if (epoch < 0) throw Error("mu_at_epoch: negative epoch");
  const auto& s = cfg.schedule;
  const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(std::max(s.span_epochs, 1)));
  switch (s.kind) {
    case MuSchedule::Kind::constant: return cfg.mu;
    case MuSchedule::Kind::linear: return s.start + (s.end - s.start) * t;
    case MuSchedule::Kind::exponential: return s.start * std::pow(s.end / s.start, t);
  }
  return cfg.mu;
}

// Prob-1 ---------------------------------------------------------------------

/// prod_j (1 - p_j) for one layer.
inline double prob1_layer(std::span<const double> p) {
  double v = 1.0;
  for (double x : p) v *= 1.0 - x;
  return v;
}

/// d/dp_j prod_m (1 - p_m) = -prod_{m != j} (1 - p_m), via prefix/suffix products.
inline std::vector<double> prob1_layer_grad(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<double> prefix(m + 1, 1.0), suffix(m + 1, 1.0), g(m);
  for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] * (1.0 - p[j]);
  for (std::size_t j = m; j-- > 0;) suffix[j] = suffix[j + 1] * (1.0 - p[j]);
  for (std::size_t j = 0; j < m; ++j) g[j] = -(prefix[j] * suffix[j + 1]);
  return g;
}

inline double prob1(const std::vector<std::vector<double>>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    check_simplex(p[i], "prob1: layer " + std::to_string(i));
    s += prob1_layer(p[i]);
  }
  return s;
}

inline std::vector<std::vector<double>> prob1_grad(const std::vector<std::vector<double>>& p) {
  std::vector<std::vector<double>> g;
  g.reserve(p.size());
  for (const auto& layer : p) g.push_back(prob1_layer_grad(layer));
  return g;
}

/// Differentiable Prob-1 over per-layer importance nodes; the backward pass
/// uses prob1_layer_grad and is chained through whatever produced p.
inline Var prob1(Tape& tape, const std::vector<Var>& p) {
  Var acc = tape.constant(Tensor::scalar(0.0));
  for (const auto& layer : p) {
    acc = add(acc, reduce(
                       layer, [](std::span<const double> v) { return prob1_layer(v); },
                       [](std::span<const double> v) { return prob1_layer_grad(v); }));
  }
  return acc;
}

}  // namespace bpnas
