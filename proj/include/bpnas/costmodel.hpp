// SPDX-License-Identifier: Apache-2.0
//
// FLOP / BOPs accounting.
//
// FLOPs count multiplies only; additions are folded in at the same b*a cost,
// so a layer's bit operations are FLOPs * b * a. Average bit is
// sqrt(BOPs / total FLOPs), which makes a uniform (b, b) network cost exactly b.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpnas/autodiff.hpp"
#include "bpnas/quantize.hpp"

namespace bpnas {

enum class LayerKind { conv2d, linear };

inline const char* to_string(LayerKind k) { return k == LayerKind::conv2d ? "conv2d" : "linear"; }

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  std::size_t in = 0;   // input channels / features
  std::size_t out = 0;  // output channels / features
  // conv2d only: square kernel, output spatial extent, stride 1 "same" padding
  std::size_t kernel = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  static LayerSpec linear(std::size_t in, std::size_t out) { return {LayerKind::linear, in, out, 1, 1, 1}; }
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t h, std::size_t w) {
    return {LayerKind::conv2d, in, out, kernel, h, w};
  }

  std::size_t padding() const { return kernel / 2; }
  inline std::int64_t flops() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::int64_t layer_flops(const LayerSpec& l) {
  auto positive = [](std::size_t v) { return v > 0; };
  if (!positive(l.in) || !positive(l.out)) throw Error("layer_flops: zero channel/feature extent");
  if (l.kind == LayerKind::linear) return static_cast<std::int64_t>(l.in * l.out);
  if (!positive(l.kernel) || !positive(l.height) || !positive(l.width))
    throw Error("layer_flops: zero kernel or spatial extent");
  if (l.kernel % 2 == 0) throw Error("layer_flops: conv2d kernel must be odd for same padding");
  return static_cast<std::int64_t>(l.in * l.out * l.kernel * l.kernel * l.height * l.width);
}

inline std::int64_t LayerSpec::flops() const { return layer_flops(*this); }

struct MixedPrecisionAssignment {
  std::vector<QuantPair> bits;

  std::size_t size() const { return bits.size(); }
  const QuantPair& operator[](std::size_t i) const { return bits[i]; }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < bits.size(); ++i) s += (i ? "|" : "") + bits[i].to_string();
    return s;
  }

  friend bool operator==(const MixedPrecisionAssignment&, const MixedPrecisionAssignment&) = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<std::vector<QuantPair>> candidates;  // one non-empty set per layer

  std::size_t size() const { return layers.size(); }

  void validate() const {
    if (layers.empty()) throw Error("network: at least one layer required");
    if (candidates.size() != layers.size()) throw Error("network: candidate sets do not match layer count");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layer_flops(layers[i]);
      if (candidates[i].empty()) throw Error("network: layer " + std::to_string(i) + " has no candidates");
      for (const auto& c : candidates[i]) {
        if (c.weight_bits < 2 || c.activation_bits < 2 || c.weight_bits > 32 || c.activation_bits > 32)
          throw Error("network: layer " + std::to_string(i) + " candidate " + c.to_string() + " outside [2,32] bits");
      }
    }
  }

  std::int64_t total_flops() const {
    std::int64_t s = 0;
    for (const auto& l : layers) s += layer_flops(l);
    return s;
  }

  /// Throws unless mp has one pair per layer drawn from that layer's candidates.
  void check_assignment(const MixedPrecisionAssignment& mp) const {
    if (mp.size() != layers.size())
      throw Error("assignment: length " + std::to_string(mp.size()) + " does not match " +
                  std::to_string(layers.size()) + " layers");
    for (std::size_t i = 0; i < mp.size(); ++i) {
      bool found = false;
      for (const auto& c : candidates[i]) found = found || c == mp[i];
      if (!found) throw Error("assignment: layer " + std::to_string(i) + " pair " + mp[i].to_string() + " is not a candidate");
    }
  }
};

inline std::int64_t bops(const NetworkSpec& net, const MixedPrecisionAssignment& mp) {
  if (mp.size() != net.size())
    throw Error("bops: assignment length " + std::to_string(mp.size()) + " != " + std::to_string(net.size()));
  std::int64_t total = 0;
  for (std::size_t i = 0; i < mp.size(); ++i) total += layer_flops(net.layers[i]) * mp[i].product();
  return total;
}

inline double average_bit(const NetworkSpec& net, const MixedPrecisionAssignment& mp) {
  return std::sqrt(static_cast<double>(bops(net, mp)) / static_cast<double>(net.total_flops()));
}

/// Budget check, boundary inclusive.
inline bool check_constraint(const NetworkSpec& net, const MixedPrecisionAssignment& mp, double b_max) {
  return average_bit(net, mp) <= b_max;
}

inline constexpr double kSimplexTolerance = 1e-6;

inline void check_simplex(std::span<const double> p, const std::string& what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= -kSimplexTolerance && v <= 1.0 + kSimplexTolerance))
      throw Error(what + ": entry " + std::to_string(v) + " outside [0,1]");
    s += v;
  }
  if (p.empty() || std::abs(s - 1.0) > kSimplexTolerance)
    throw Error(what + ": entries sum to " + std::to_string(s) + ", not 1");
}

/// Per-candidate bit operations FLOP_i * b_j * a_j of layer i.
inline std::vector<double> candidate_bops(const NetworkSpec& net, std::size_t layer) {
  const auto flops = layer_flops(net.layers[layer]);
  std::vector<double> w;
  for (const auto& c : net.candidates[layer]) w.push_back(static_cast<double>(flops * c.product()));
  return w;
}

/// Expected average bit of the relaxed network:
///   sqrt( sum_i sum_j p_ij * FLOP_i * b_j * a_j / sum_i FLOP_i ).
/// The square root is taken after the expectation so that a one-hot p gives
/// exactly average_bit of the selected assignment.
inline double expected_cost(const NetworkSpec& net, const std::vector<std::vector<double>>& p) {
  if (p.size() != net.size()) throw Error("expected_cost: importance vector count does not match layers");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].size() != net.candidates[i].size())
      throw Error("expected_cost: layer " + std::to_string(i) + " importance length mismatch");
    check_simplex(p[i], "expected_cost: layer " + std::to_string(i));
    auto w = candidate_bops(net, i);
    for (std::size_t j = 0; j < w.size(); ++j) acc += p[i][j] * w[j];
  }
  return std::sqrt(acc / static_cast<double>(net.total_flops()));
}

/// Differentiable form of expected_cost over per-layer importance nodes.
inline Var expected_cost(Tape& tape, const NetworkSpec& net, const std::vector<Var>& p) {
  if (p.size() != net.size()) throw Error("expected_cost: importance vector count does not match layers");
  Var acc = tape.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto w = candidate_bops(net, i);
    if (p[i].value().size() != w.size())
      throw Error("expected_cost: layer " + std::to_string(i) + " importance length mismatch");
    acc = add(acc, dot(p[i], tape.constant(Tensor::vector(std::move(w)))));
  }
  const double total = static_cast<double>(net.total_flops());
  return sqrt(map(
      acc, [total](double v) { return v / total; }, [total](double) { return 1.0 / total; }));
}

}  // namespace bpnas
