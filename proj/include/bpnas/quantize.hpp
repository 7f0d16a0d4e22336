// SPDX-License-Identifier: Apache-2.0
//
// Fake quantization with learned clipping.
//
// Weights are clamped to [-alpha, alpha] and snapped to 2^(b-1)-1 levels per
// side; activations are clamped to [0, alpha] and snapped to 2^a-1 steps.
// Rounding is round-half-to-even (std::nearbyint under the default FP
// environment). Gradients are straight-through inside the clip range; the
// clip parameter receives the PACT-style subgradient at the clip points.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>

#include "bpnas/autodiff.hpp"
#include "bpnas/log.hpp"

namespace bpnas {

struct QuantPair {
  int weight_bits = 32;
  int activation_bits = 32;

  std::int64_t product() const { return static_cast<std::int64_t>(weight_bits) * activation_bits; }
  std::string to_string() const { return std::to_string(weight_bits) + "x" + std::to_string(activation_bits); }

  friend bool operator==(const QuantPair&, const QuantPair&) = default;
  friend auto operator<=>(const QuantPair&, const QuantPair&) = default;
};

/// Learnable clip value, kept strictly positive.
struct ClipParam {
  static constexpr double kFloor = 1e-6;

  Parameter alpha;

  ClipParam() : ClipParam(1.0) {}
  explicit ClipParam(double init) : alpha(Tensor::scalar(init)) {
    if (!(init > 0.0)) throw Error("ClipParam: alpha must be positive, got " + std::to_string(init));
  }

  double value() const { return alpha.value[0]; }
  void reproject() { alpha.value[0] = std::max(alpha.value[0], kFloor); }
};

namespace detail {

inline void check_quant_args(const char* op, int bits, double alpha) {
  if (bits < 2) throw Error(std::string(op) + ": bitwidth must be >= 2, got " + std::to_string(bits));
  if (bits > 32) throw Error(std::string(op) + ": bitwidth must be <= 32, got " + std::to_string(bits));
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw Error(std::string(op) + ": alpha must be positive and finite, got " + std::to_string(alpha));
}

inline void check_finite(const char* op, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw Error(std::string(op) + ": non-finite input at index " + std::to_string(i));
  }
}

// Snaps c in [-alpha, alpha] to k * alpha / levels.
inline double snap(double c, double alpha, double levels) {
  const double k = std::nearbyint(c / alpha * levels);
  if (k >= levels) return alpha;
  if (k <= -levels) return -alpha;
  return k * alpha / levels;
}

}  // namespace detail

inline double weight_levels(int bits) { return std::ldexp(1.0, bits - 1) - 1.0; }
inline double activation_levels(int bits) { return std::ldexp(1.0, bits) - 1.0; }

namespace detail {

// Unchecked element kernels; callers validate bits and alpha once per tensor.
inline double qweight(double w, int bits, double alpha) {
  return snap(std::clamp(w, -alpha, alpha), alpha, weight_levels(bits));
}
inline double qactivation(double x, int bits, double alpha) {
  return snap(std::clamp(x, 0.0, alpha), alpha, activation_levels(bits));
}

}  // namespace detail

inline double quantize_weight(double w, int bits, double alpha) {
  detail::check_quant_args("quantize_weight", bits, alpha);
  if (!std::isfinite(w)) throw Error("quantize_weight: non-finite input");
  return detail::qweight(w, bits, alpha);
}

inline double quantize_activation(double x, int bits, double alpha) {
  detail::check_quant_args("quantize_activation", bits, alpha);
  if (!std::isfinite(x)) throw Error("quantize_activation: non-finite input");
  return detail::qactivation(x, bits, alpha);
}

inline Tensor quantize_weight(const Tensor& w, int bits, double alpha) {
  detail::check_quant_args("quantize_weight", bits, alpha);
  detail::check_finite("quantize_weight", w);
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = detail::qweight(w[i], bits, alpha);
  return out;
}

inline Tensor quantize_activation(const Tensor& x, int bits, double alpha) {
  detail::check_quant_args("quantize_activation", bits, alpha);
  detail::check_finite("quantize_activation", x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::qactivation(x[i], bits, alpha);
  return out;
}

// Straight-through gradient rules: (d out / d in, d out / d alpha).

inline std::pair<double, double> ste_weight_grad(double w, double alpha) {
  if (w >= alpha) return {0.0, 1.0};
  if (w <= -alpha) return {0.0, -1.0};
  return {1.0, 0.0};
}

inline std::pair<double, double> ste_activation_grad(double x, double alpha) {
  if (x >= alpha) return {0.0, 1.0};
  if (x <= 0.0) return {0.0, 0.0};
  return {1.0, 0.0};
}

struct WeightQuantHook {
  int bits;
  double forward(double w, double a) const { return detail::qweight(w, bits, a); }
  std::pair<double, double> grad(double w, double a) const { return ste_weight_grad(w, a); }
};

struct ActivationQuantHook {
  int bits;
  double forward(double x, double a) const { return detail::qactivation(x, bits, a); }
  std::pair<double, double> grad(double x, double a) const { return ste_activation_grad(x, a); }
};

struct ClipReluHook {
  double forward(double x, double a) const { return std::min(std::max(x, 0.0), a); }
  std::pair<double, double> grad(double x, double a) const { return ste_activation_grad(x, a); }
};

inline Var fake_quant_weight(Var w, Var alpha, int bits) {
  detail::check_quant_args("quantize_weight", bits, alpha.value().item());
  detail::check_finite("quantize_weight", w.value());
  return clamp(w, alpha, WeightQuantHook{bits});
}

inline Var fake_quant_activation(Var x, Var alpha, int bits) {
  detail::check_quant_args("quantize_activation", bits, alpha.value().item());
  detail::check_finite("quantize_activation", x.value());
  return clamp(x, alpha, ActivationQuantHook{bits});
}

/// min(max(x, 0), alpha)
inline Var clip_relu(Var x, Var alpha) { return clamp(x, alpha, ClipReluHook{}); }

inline Tensor clip_relu(const Tensor& x, double alpha) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = ClipReluHook{}.forward(x[i], alpha);
  return out;
}

struct ReshapeResult {
  Tensor weights;
  double threshold = 0.0;
  bool degenerate = false;
};

/// Distribution reshaping: clips W to [-T, T] with T = k * mean|W|.
/// k = +inf disables clipping. An all-zero W is returned unchanged with a warning.
inline ReshapeResult reshape_clip(const Tensor& w, double k) {
  if (w.empty()) throw Error("reshape_clip: empty weight tensor");
  if (!(k > 0.0)) throw Error("reshape_clip: k must be positive, got " + std::to_string(k));
  if (std::isinf(k)) return {w, std::numeric_limits<double>::infinity(), false};
  double mean_abs = 0.0;
  for (double v : w.data()) mean_abs += std::abs(v);
  mean_abs /= static_cast<double>(w.size());
  if (mean_abs == 0.0) {
    logging::warn("reshape_clip: all-zero layer left unchanged");
    return {w, 0.0, true};
  }
  const double t = k * mean_abs;
  ReshapeResult r{Tensor(w.shape()), t, false};
  for (std::size_t i = 0; i < w.size(); ++i) r.weights[i] = std::clamp(w[i], -t, t);
  r.weights.set_requires_grad(w.requires_grad());
  return r;
}

}  // namespace bpnas
