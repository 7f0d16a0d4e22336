// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference self checks of the hand-derived and reverse-mode
// gradients. Each returns the worst error found and whether it is within
// tolerance. A Fault flips the sign of one analytic gradient so the harness
// itself can be shown to catch errors.
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "bpnas/data.hpp"
#include "bpnas/gradcheck.hpp"
#include "bpnas/io.hpp"
#include "bpnas/regularizers.hpp"
#include "bpnas/rng.hpp"
#include "bpnas/search.hpp"
#include "bpnas/supernet.hpp"

namespace bpnas {

enum class Fault { none, barrier_sign, prob1_sign, theta_sign };

inline std::optional<Fault> parse_fault(const std::string& s) {
  if (s == "none") return Fault::none;
  if (s == "barrier-sign") return Fault::barrier_sign;
  if (s == "prob1-sign") return Fault::prob1_sign;
  if (s == "theta-sign") return Fault::theta_sign;
  return std::nullopt;
}

struct CheckOutcome {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

inline CheckOutcome finish_check(std::string name, double err, double tol, std::string detail) {
  return {std::move(name), err, tol, err < tol, std::move(detail)};
}

/// Barrier derivative against central differences on 50 evenly spaced
/// points from b_max - 3 to b_max - 0.01, for each mu. Error is relative to
/// the numeric derivative.
inline CheckOutcome check_barrier_gradient(double b_max, const std::vector<double>& mus = {0.05, 0.2, 0.5},
                                           Fault fault = Fault::none, double tol = 1e-6) {
  constexpr int kPoints = 50;
  constexpr double h = 1e-6;
  const double lo = b_max - 3.0, hi = b_max - 0.01;
  double worst = 0.0;
  std::string where;
  for (double mu : mus) {
    BarrierConfig cfg;
    cfg.b_max = b_max;
    cfg.mu = mu;
    cfg.validate();
    for (int k = 0; k < kPoints; ++k) {
      const double e = lo + (hi - lo) * k / (kPoints - 1);
      double a = barrier_penalty_grad(e, cfg);
      if (fault == Fault::barrier_sign) a = -a;
      const double n = (barrier_penalty(e + h, cfg) - barrier_penalty(e - h, cfg)) / (2.0 * h);
      const double err = std::abs(a - n) / std::abs(n);
      if (!(err <= worst)) {
        worst = err;
        where = "mu=" + format_real(mu) + " E=" + format_real(e);
      }
    }
  }
  return finish_check("barrier_gradient", worst, tol, "worst at " + where);
}

/// Penalty at E = b_max + 1 - e, where log(log(e)) = 0.
inline CheckOutcome check_barrier_zero(double b_max, double tol = 1e-12) {
  double worst = 0.0;
  for (double mu : {0.05, 0.2, 0.5, 1.0}) {
    BarrierConfig cfg;
    cfg.b_max = b_max;
    cfg.mu = mu;
    worst = std::max(worst, std::abs(barrier_penalty(b_max + 1.0 - std::numbers::e, cfg)));
  }
  return finish_check("barrier_zero", worst, tol, "|penalty(B_max+1-e)|");
}

/// Uniform point on the probability simplex (flat Dirichlet).
inline std::vector<double> sample_simplex(Rng& rng, std::size_t m) {
  std::vector<double> p(m);
  double s = 0.0;
  for (auto& v : p) {
    double u = 0.0;
    while (u <= 0.0) u = rng.uniform();
    v = -std::log(u);
    s += v;
  }
  for (auto& v : p) v /= s;
  return p;
}

/// Prob-1 gradient against coordinate central differences at random simplex
/// points with 2..5 candidates.
inline CheckOutcome check_prob1_gradient(std::uint64_t seed, int points = 100, Fault fault = Fault::none,
                                         double tol = 1e-6) {
  Rng rng(derive_seed(seed, 0x9b01));
  double worst = 0.0;
  int worst_point = 0;
  for (int k = 0; k < points; ++k) {
    auto p = sample_simplex(rng, 2 + static_cast<std::size_t>(k % 4));
    auto r = grad_check([](std::span<const double> x) { return prob1_layer(x); },
                        [fault](std::span<const double> x) {
                          auto g = prob1_layer_grad(x);
                          if (fault == Fault::prob1_sign)
                            for (auto& v : g) v = -v;
                          return g;
                        },
                        p, 1e-6);
    if (!(r.max_rel_error <= worst)) {
      worst = r.max_rel_error;
      worst_point = k;
    }
  }
  return finish_check("prob1_gradient", worst, tol, "worst at point " + std::to_string(worst_point));
}

/// Property 1: zero at every one-hot vector, positive elsewhere. The error
/// reported is the largest one-hot value plus the count of non-one-hot
/// samples whose value is not positive.
inline CheckOutcome check_prob1_property(std::uint64_t seed, int samples = 10000) {
  double at_one_hot = 0.0;
  for (std::size_t m = 1; m <= 6; ++m)
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> p(m, 0.0);
      p[j] = 1.0;
      at_one_hot = std::max(at_one_hot, std::abs(prob1_layer(p)));
    }
  Rng rng(derive_seed(seed, 0x9b02));
  int non_positive = 0;
  for (int k = 0; k < samples; ++k) {
    auto p = sample_simplex(rng, 2 + static_cast<std::size_t>(k % 5));
    if (!(prob1_layer(p) > 0.0)) ++non_positive;
  }
  return {"prob1_property", at_one_hot + non_positive, 0.0, at_one_hot == 0.0 && non_positive == 0,
          "max one-hot value " + format_real(at_one_hot) + ", non-positive samples " + std::to_string(non_positive) +
              "/" + std::to_string(samples)};
}

/// Two-layer toy supernet (2 -> 5 -> 3) on a small spiral batch. Clip values
/// sit strictly inside the data range so both sides of each clip are used.
struct ToySupernet {
  Supernet sn;
  Batch batch;
  SearchConfig cfg;
};

inline ToySupernet make_toy_supernet(std::uint64_t seed) {
  NetworkSpec net;
  net.layers = {LayerSpec::linear(2, 5), LayerSpec::linear(5, 3)};
  net.candidates.assign(2, {{2, 2}, {3, 3}, {4, 4}});
  Checkpoint ck = init_checkpoint(net, derive_seed(seed, 0x70e1));
  Dataset ds = gen_spirals(3, 8, 0.1, derive_seed(seed, 0x70e2));
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  ToySupernet t;
  t.batch = ds.gather(idx);
  auto act = calibrate_activation_alphas(net, ck, t.batch.x);
  for (auto& a : act) a *= 0.7;
  t.sn = Supernet::build(net, ck, {false, true}, act);
  Rng rng(derive_seed(seed, 0x70e3));
  for (auto& e : t.sn.edges) {
    for (auto& c : e.candidates) c.weight_alpha = ClipParam(0.8 * max_abs(e.weight.value));
    for (std::size_t j = 0; j < e.theta.value.size(); ++j) e.theta.value[j] = rng.normal();
  }
  t.cfg.barrier.b_max = 4.5;
  t.cfg.barrier.mu = 0.2;
  t.cfg.barrier.schedule.kind = MuSchedule::Kind::constant;
  return t;
}

namespace detail {

// Worst error of dL2/dtheta against central differences over the given edges.
inline std::pair<double, std::string> theta_fd(ToySupernet& t, const std::vector<std::size_t>& edges, Fault fault) {
  const double mu = t.cfg.barrier.mu;
  auto groups = t.sn.arch_groups();
  zero_grads(groups);
  {
    Tape tape;
    auto l = arch_loss(tape, t.sn, t.batch, t.cfg, mu);
    tape.backward(l.total);
  }
  auto value = [&] {
    Tape tape;
    return arch_loss(tape, t.sn, t.batch, t.cfg, mu).total.item();
  };
  constexpr double h = 1e-6;
  double worst = 0.0;
  std::string where;
  for (std::size_t i : edges) {
    auto& th = t.sn.edges[i].theta;
    for (std::size_t j = 0; j < th.value.size(); ++j) {
      const double x0 = th.value[j];
      th.value[j] = x0 + h;
      const double fp = value();
      th.value[j] = x0 - h;
      const double fm = value();
      th.value[j] = x0;
      const double a = fault == Fault::theta_sign ? -th.grad[j] : th.grad[j];
      const double err = grad_rel_error(a, (fp - fm) / (2.0 * h));
      if (!(err <= worst)) {
        worst = err;
        where = "edge " + std::to_string(i) + " candidate " + std::to_string(j);
      }
    }
  }
  return {worst, where};
}

}  // namespace detail

/// dL2/dtheta through the supernet (validation loss, barrier and Prob-1)
/// against central differences. Theta of an inner edge reaches the loss
/// through later quantizers, whose straight-through gradient is exact only
/// for the clip-only surrogate, so every edge is checked with rounding off
/// and the last edge is also checked with rounding on.
inline CheckOutcome check_supernet_theta_gradient(std::uint64_t seed, Fault fault = Fault::none, double tol = 1e-5) {
  auto t = make_toy_supernet(seed);
  std::vector<std::size_t> all(t.sn.edges.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto [exact, exact_at] = detail::theta_fd(t, {all.back()}, fault);
  t.sn.round = false;
  auto [surrogate, surrogate_at] = detail::theta_fd(t, all, fault);
  return finish_check("supernet_theta_gradient", std::max(exact, surrogate), tol,
                      "last edge quantized " + format_real(exact) + " at " + exact_at + "; all edges clip-only " +
                          format_real(surrogate) + " at " + surrogate_at);
}

/// dL_train/d(W, b, alpha) through the supernet with rounding disabled,
/// i.e. the straight-through gradient against differences of the clipped
/// surrogate.
inline CheckOutcome check_supernet_weight_gradient(std::uint64_t seed, double tol = 1e-5) {
  auto t = make_toy_supernet(seed);
  t.sn.round = false;
  auto groups = t.sn.weight_groups(0.0, 0.0);
  zero_grads(groups);
  {
    Tape tape;
    Var loss = cross_entropy(t.sn.forward(tape, t.batch.x, Bind::weights).logits, t.batch.y);
    tape.backward(loss);
  }
  auto value = [&] {
    Tape tape;
    return cross_entropy(t.sn.forward(tape, t.batch.x, Bind::none).logits, t.batch.y).item();
  };
  constexpr double h = 1e-6;
  double worst = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups)
    for (Parameter* p : g.params)
      for (std::size_t j = 0; j < p->value.size(); ++j, ++count) {
        const double x0 = p->value[j];
        p->value[j] = x0 + h;
        const double fp = value();
        p->value[j] = x0 - h;
        const double fm = value();
        p->value[j] = x0;
        worst = std::max(worst, grad_rel_error(p->grad[j], (fp - fm) / (2.0 * h)));
      }
  return finish_check("supernet_weight_gradient", worst, tol, std::to_string(count) + " coordinates");
}

}  // namespace bpnas
