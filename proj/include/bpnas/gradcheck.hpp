// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bpnas/autodiff.hpp"

namespace bpnas {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// |analytic - numeric| / max(1, |analytic|)
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

namespace detail {

inline void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw Error("grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));
}

inline double finite_or_throw(double v, std::size_t coord) {
  if (!std::isfinite(v)) throw Error("grad_check: non-finite value at coordinate " + std::to_string(coord));
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar tape function against central
/// differences at every coordinate of x.
inline GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  detail::check_eps(eps);
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    Var y = f(tape, xv);
    detail::finite_or_throw(y.value().item(), 0);
    tape.backward(y);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.constant(at)).value().item();
  };
  GradCheckResult r;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    detail::finite_or_throw(analytic[i], i);
    const double x0 = x[i];
    probe[i] = x0 + eps;
    const double fp = detail::finite_or_throw(eval(probe), i);
    probe[i] = x0 - eps;
    const double fm = detail::finite_or_throw(eval(probe), i);
    probe[i] = x0;
    const double err = grad_rel_error(analytic[i], (fp - fm) / (2.0 * eps));
    if (err > r.max_rel_error) r = {err, i};
  }
  return r;
}

/// Same check for a plain function with a hand-derived gradient.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                                  const std::function<std::vector<double>(std::span<const double>)>& grad,
                                  std::vector<double> x, double eps) {
  detail::check_eps(eps);
  std::vector<double> g = grad(x);
  GradCheckResult r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    detail::finite_or_throw(g[i], i);
    const double x0 = x[i];
    x[i] = x0 + eps;
    const double fp = detail::finite_or_throw(f(x), i);
    x[i] = x0 - eps;
    const double fm = detail::finite_or_throw(f(x), i);
    x[i] = x0;
    const double err = grad_rel_error(g[i], (fp - fm) / (2.0 * eps));
    if (err > r.max_rel_error) r = {err, i};
  }
  return r;
}

}  // namespace bpnas
