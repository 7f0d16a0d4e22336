// SPDX-License-Identifier: Apache-2.0
//
// Plain feed-forward quantized networks: a chain of linear / conv2d layers
// with ReLU between them. Each layer optionally fake-quantizes its weights
// and its input activation; a layer without bits runs in float.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "bpnas/autodiff.hpp"
#include "bpnas/costmodel.hpp"
#include "bpnas/data.hpp"
#include "bpnas/optim.hpp"
#include "bpnas/quantize.hpp"
#include "bpnas/rng.hpp"

namespace bpnas {

/// Float weights of every layer, in network order.
struct Checkpoint {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  double reshape_k = std::numeric_limits<double>::infinity();  // inf: trained without reshaping
};

inline Shape weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::linear) return {l.out, l.in};
  return {l.out, l.in, l.kernel, l.kernel};
}

inline std::size_t fan_in(const LayerSpec& l) { return l.in * l.kernel * l.kernel; }

/// He-uniform weights and zero biases.
inline Checkpoint init_checkpoint(const NetworkSpec& net, std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint ck;
  for (const auto& l : net.layers) {
    Tensor w(weight_shape(l));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(l)));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    ck.weights.push_back(std::move(w));
    ck.biases.emplace_back(Shape{l.out}, 0.0);
  }
  return ck;
}

namespace detail {

/// Reshapes x to what layer l consumes: [N, in] for linear, [N, in, H, W] for conv2d.
inline Var layer_input(Var x, const LayerSpec& l) {
  const std::size_t n = x.shape()[0];
  const std::size_t per = x.value().size() / n;
  if (l.kind == LayerKind::linear) {
    if (per != l.in) throw ShapeError("linear input", x.shape(), Shape{n, l.in});
    return x.shape().size() == 2 ? x : reshape(x, {n, l.in});
  }
  Shape want{n, l.in, l.height, l.width};
  if (per != numel(want) / n) throw ShapeError("conv2d input", x.shape(), want);
  return x.shape() == want ? x : reshape(x, want);
}

inline Var apply_layer(const LayerSpec& l, Var x, Var w, Var b) {
  x = layer_input(x, l);
  if (l.kind == LayerKind::linear) return linear(x, w, b);
  return conv2d(x, w, b, l.padding());
}

}  // namespace detail

struct QuantLayer {
  LayerSpec spec;
  Parameter weight;
  Parameter bias;
  std::optional<QuantPair> bits;  // nullopt: float layer
  ClipParam weight_alpha;
  ClipParam act_alpha;
  bool quantize_input = true;
};

class QuantNet {
 public:
  std::vector<QuantLayer> layers;

  /// Logits for batch x. With train = true, weights, biases and clip values
  /// are bound as gradient-tracked parameters.
  Var forward(Tape& tape, const Tensor& x, bool train) {
    Var v = tape.constant(x);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& L = layers[i];
      auto bind = [&](Parameter& p) { return train ? tape.param(p) : tape.frozen(p); };
      Var w = bind(L.weight);
      Var b = bind(L.bias);
      if (L.bits) {
        if (L.quantize_input) v = fake_quant_activation(v, bind(L.act_alpha.alpha), L.bits->activation_bits);
        w = fake_quant_weight(w, bind(L.weight_alpha.alpha), L.bits->weight_bits);
      }
      v = detail::apply_layer(L.spec, v, w, b);
      if (i + 1 < layers.size()) v = relu(v);
    }
    return v;
  }

  std::vector<ParamGroup> param_groups(double weight_decay, double alpha_decay, double alpha_lr_scale = 1.0) {
    ParamGroup w{{}, weight_decay}, b{{}, 0.0}, a{{}, alpha_decay, alpha_lr_scale};
    for (auto& L : layers) {
      w.params.push_back(&L.weight);
      b.params.push_back(&L.bias);
      if (L.bits) {
        a.params.push_back(&L.weight_alpha.alpha);
        if (L.quantize_input) a.params.push_back(&L.act_alpha.alpha);
      }
    }
    return {w, b, a};
  }

  void reproject_alphas() {
    for (auto& L : layers) {
      L.weight_alpha.reproject();
      L.act_alpha.reproject();
    }
  }

  MixedPrecisionAssignment assignment() const {
    MixedPrecisionAssignment mp;
    for (const auto& L : layers) mp.bits.push_back(L.bits.value_or(QuantPair{32, 32}));
    return mp;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    for (const auto& L : layers) {
      ck.weights.push_back(L.weight.value);
      ck.biases.push_back(L.bias.value);
    }
    return ck;
  }
};

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Largest input activation seen by each layer when running the float
/// checkpoint on x; used to initialise activation clip values.
inline std::vector<double> calibrate_activation_alphas(const NetworkSpec& net, const Checkpoint& ck, const Tensor& x) {
  std::vector<double> out;
  Tape tape;
  Var v = tape.constant(x);
  for (std::size_t i = 0; i < net.size(); ++i) {
    out.push_back(std::max(max_abs(v.value()), 1e-3));
    v = detail::apply_layer(net.layers[i], v, tape.constant(ck.weights[i]), tape.constant(ck.biases[i]));
    if (i + 1 < net.size()) v = relu(v);
  }
  return out;
}

/// How clip values are initialised from a float checkpoint. Weight clips
/// start at max|W| of the layer; activation clips at a fixed value or at the
/// calibrated per-layer maximum.
struct AlphaInit {
  std::optional<double> activation;  // nullopt: calibrate
};

inline double weight_alpha_init(const Tensor& w) { return std::max(max_abs(w), 1e-3); }

inline std::vector<bool> default_quantize_input(std::size_t layers) {
  std::vector<bool> q(layers, true);
  if (!q.empty()) q[0] = false;
  return q;
}

/// Float network (no quantization) with checkpoint weights.
inline QuantNet make_float_net(const NetworkSpec& net, const Checkpoint& ck) {
  QuantNet qn;
  for (std::size_t i = 0; i < net.size(); ++i) {
    QuantLayer L;
    L.spec = net.layers[i];
    L.weight = Parameter(ck.weights.at(i));
    L.bias = Parameter(ck.biases.at(i));
    qn.layers.push_back(std::move(L));
  }
  return qn;
}

/// Quantized network carrying mp, initialised from a float checkpoint.
inline QuantNet make_quant_net(const NetworkSpec& net, const Checkpoint& ck, const MixedPrecisionAssignment& mp,
                               const std::vector<bool>& quantize_input, const std::vector<double>& act_alphas) {
  net.check_assignment(mp);
  QuantNet qn = make_float_net(net, ck);
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& L = qn.layers[i];
    L.bits = mp[i];
    L.quantize_input = quantize_input.at(i);
    L.weight_alpha = ClipParam(weight_alpha_init(ck.weights[i]));
    L.act_alpha = ClipParam(act_alphas.at(i));
  }
  return qn;
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

inline std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const std::size_t c = logits.shape().back();
  const double* row = logits.data().data() + r * c;
  return static_cast<std::size_t>(std::max_element(row, row + c) - row);
}

template <class Net>
EvalResult evaluate(Net& model, const Dataset& ds, const std::vector<std::size_t>& idx, std::size_t chunk = 512) {
  if (idx.empty()) return {};
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += chunk) {
    const std::size_t n = std::min(chunk, idx.size() - start);
    Batch b = ds.gather(std::span(idx).subspan(start, n));
    Tape tape;
    Var logits = model.forward(tape, b.x, false);
    loss += cross_entropy(logits, b.y).item() * static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) correct += argmax_row(logits.value(), r) == static_cast<std::size_t>(b.y[r]);
  }
  return {static_cast<double>(correct) / static_cast<double>(idx.size()), loss / static_cast<double>(idx.size())};
}

}  // namespace bpnas
