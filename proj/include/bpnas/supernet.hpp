// SPDX-License-Identifier: Apache-2.0
//
// Weight-sharing supernet. Every layer is an edge holding one shared weight
// tensor and m candidate bitwidth pairs; the edge output is the
// softmax(theta)-weighted sum of the candidate outputs. A layer with a single
// candidate is an ordinary pinned layer (p = [1], no special casing).
#pragma once

#include <optional>
#include <vector>

#include "bpnas/autodiff.hpp"
#include "bpnas/costmodel.hpp"
#include "bpnas/model.hpp"
#include "bpnas/quantize.hpp"

namespace bpnas {

struct Candidate {
  QuantPair bits;
  ClipParam weight_alpha;  // each candidate owns its clip values
  ClipParam act_alpha;
};

struct Edge {
  LayerSpec spec;
  Parameter weight;  // shared by every candidate
  Parameter bias;
  std::vector<Candidate> candidates;
  Parameter theta;  // architecture logits, one per candidate
  bool quantize_input = true;

  std::size_t size() const { return candidates.size(); }
};

/// Which parameter set a forward pass makes differentiable.
enum class Bind { none, weights, arch };

/// softmax(theta), computed with max subtraction.
inline std::vector<double> importance_factors(const Tensor& theta) {
  Tape tape;
  Var p = softmax(tape.constant(theta));
  return p.value().values();
}

inline Var importance_factors(Var theta) { return softmax(theta); }

/// v_{i+1} = sum_j p_j * op_j(v_i). Sums in candidate order. With round
/// false the quantizers only clip, which is the function whose gradient the
/// straight-through rules compute.
inline Var mix_forward(Tape& tape, Var v, Edge& edge, Var p, Bind bind, bool round = true) {
  if (p.value().size() != edge.size()) throw ShapeError("mix_forward", p.shape(), Shape{edge.size()});
  auto weights = [&](Parameter& q) { return bind == Bind::weights ? tape.param(q) : tape.frozen(q); };
  Var w = weights(edge.weight);
  Var b = weights(edge.bias);
  std::optional<Var> acc;
  for (std::size_t j = 0; j < edge.size(); ++j) {
    auto& c = edge.candidates[j];
    Var in = v;
    Var wa = weights(c.weight_alpha.alpha);
    if (edge.quantize_input) {
      Var aa = weights(c.act_alpha.alpha);
      in = round ? fake_quant_activation(v, aa, c.bits.activation_bits) : clip_relu(v, aa);
    }
    Var wq = round ? fake_quant_weight(w, wa, c.bits.weight_bits) : clamp(w, wa);
    Var out = detail::apply_layer(edge.spec, in, wq, b);
    if (acc && out.shape() != acc->shape()) throw ShapeError("mix_forward", acc->shape(), out.shape());
    Var term = scale(out, index(p, j));
    acc = acc ? add(*acc, term) : term;
  }
  return *acc;
}

struct SupernetOutput {
  Var logits;
  std::vector<Var> p;  // importance factors per edge
};

class Supernet {
 public:
  NetworkSpec net;
  std::vector<Edge> edges;
  bool round = true;

  /// Shared weights from a float checkpoint; theta = 0 (uniform importance).
  static Supernet build(const NetworkSpec& net, const Checkpoint& ck, const std::vector<bool>& quantize_input,
                        const std::vector<double>& act_alphas) {
    net.validate();
    Supernet sn;
    sn.net = net;
    for (std::size_t i = 0; i < net.size(); ++i) {
      Edge e;
      e.spec = net.layers[i];
      e.weight = Parameter(ck.weights.at(i));
      e.bias = Parameter(ck.biases.at(i));
      e.quantize_input = quantize_input.at(i);
      for (const auto& bits : net.candidates[i])
        e.candidates.push_back({bits, ClipParam(weight_alpha_init(ck.weights[i])), ClipParam(act_alphas.at(i))});
      e.theta = Parameter(Tensor(Shape{e.size()}, 0.0));
      sn.edges.push_back(std::move(e));
    }
    return sn;
  }

  /// Forward pass. p_override replaces softmax(theta) per edge when given.
  SupernetOutput forward(Tape& tape, const Tensor& x, Bind bind,
                         const std::vector<std::vector<double>>* p_override = nullptr) {
    SupernetOutput out;
    Var v = tape.constant(x);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      auto& e = edges[i];
      Var p = p_override ? tape.constant(Tensor::vector((*p_override).at(i)))
                         : importance_factors(bind == Bind::arch ? tape.param(e.theta) : tape.frozen(e.theta));
      out.p.push_back(p);
      v = mix_forward(tape, v, e, p, bind, round);
      if (i + 1 < edges.size()) v = relu(v);
    }
    out.logits = v;
    return out;
  }

  /// Model-compatible forward (logits only).
  Var forward(Tape& tape, const Tensor& x, bool train) { return forward(tape, x, train ? Bind::weights : Bind::none).logits; }

  std::vector<std::vector<double>> importance() const {
    std::vector<std::vector<double>> p;
    for (const auto& e : edges) p.push_back(importance_factors(e.theta.value));
    return p;
  }

  std::vector<ParamGroup> weight_groups(double weight_decay, double alpha_decay, double alpha_lr_scale = 1.0) {
    ParamGroup w{{}, weight_decay}, b{{}, 0.0}, a{{}, alpha_decay, alpha_lr_scale};
    for (auto& e : edges) {
      w.params.push_back(&e.weight);
      b.params.push_back(&e.bias);
      for (auto& c : e.candidates) {
        a.params.push_back(&c.weight_alpha.alpha);
        if (e.quantize_input) a.params.push_back(&c.act_alpha.alpha);
      }
    }
    return {w, b, a};
  }

  std::vector<ParamGroup> arch_groups() {
    ParamGroup g{{}, 0.0};
    for (auto& e : edges) g.params.push_back(&e.theta);
    return {g};
  }

  void reproject_alphas() {
    for (auto& e : edges)
      for (auto& c : e.candidates) {
        c.weight_alpha.reproject();
        c.act_alpha.reproject();
      }
  }
};

/// Index of the selected candidate: argmax p, exact ties go to the lower
/// b*a product, then to the lower index.
inline std::size_t select_candidate(const std::vector<double>& p, const std::vector<QuantPair>& cands) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.size(); ++j) {
    if (p[j] > p[best] || (p[j] == p[best] && cands[j].product() < cands[best].product())) best = j;
  }
  return best;
}

inline MixedPrecisionAssignment sample_mixed_precision(const Supernet& sn) {
  MixedPrecisionAssignment mp;
  auto p = sn.importance();
  for (std::size_t i = 0; i < sn.edges.size(); ++i) mp.bits.push_back(sn.net.candidates[i][select_candidate(p[i], sn.net.candidates[i])]);
  return mp;
}

/// One-hot importance vectors of the sampled assignment.
inline std::vector<std::vector<double>> one_hot_importance(const Supernet& sn) {
  std::vector<std::vector<double>> out;
  auto p = sn.importance();
  for (std::size_t i = 0; i < sn.edges.size(); ++i) {
    std::vector<double> h(p[i].size(), 0.0);
    h[select_candidate(p[i], sn.net.candidates[i])] = 1.0;
    out.push_back(std::move(h));
  }
  return out;
}

/// Standalone quantized network with the sampled pairs, a copy of the shared
/// weights, and the selected candidates' clip values.
inline QuantNet export_sampled(const Supernet& sn) {
  QuantNet qn;
  auto p = sn.importance();
  for (std::size_t i = 0; i < sn.edges.size(); ++i) {
    const auto& e = sn.edges[i];
    const auto& c = e.candidates[select_candidate(p[i], sn.net.candidates[i])];
    QuantLayer L;
    L.spec = e.spec;
    L.weight = Parameter(e.weight.value);
    L.bias = Parameter(e.bias.value);
    L.bits = c.bits;
    L.weight_alpha = ClipParam(c.weight_alpha.value());
    L.act_alpha = ClipParam(c.act_alpha.value());
    L.quantize_input = e.quantize_input;
    qn.layers.push_back(std::move(L));
  }
  return qn;
}

}  // namespace bpnas
