// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "bpnas/tensor.hpp"

namespace bpnas {

struct ParamGroup {
  std::vector<Parameter*> params;
  double weight_decay = 0.0;
  double lr_scale = 1.0;
};

/// SGD with heavy-ball momentum; decay is added to the gradient.
class MomentumSgd {
 public:
  MomentumSgd(double momentum) : momentum_(momentum) {}

  void step(const std::vector<ParamGroup>& groups, double lr) {
    for (const auto& g : groups) {
      for (Parameter* p : g.params) {
        auto [it, fresh] = velocity_.try_emplace(p, p->value.shape(), 0.0);
        Tensor& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double d = p->grad[i] + g.weight_decay * p->value[i];
          v[i] = momentum_ * v[i] + d;
          p->value[i] -= lr * g.lr_scale * v[i];
        }
      }
    }
  }

 private:
  double momentum_;
  std::map<const Parameter*, Tensor> velocity_;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamGroup>& groups, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& g : groups) {
      for (Parameter* p : g.params) {
        auto [it, fresh] = state_.try_emplace(p, Moments{Tensor(p->value.shape(), 0.0), Tensor(p->value.shape(), 0.0)});
        auto& [m, v] = it->second;
        for (std::size_t i = 0; i < m.size(); ++i) {
          const double d = p->grad[i] + g.weight_decay * p->value[i];
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * d;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * d * d;
          p->value[i] -= lr * g.lr_scale * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
      }
    }
  }

 private:
  struct Moments {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<const Parameter*, Moments> state_;
};

inline void zero_grads(const std::vector<ParamGroup>& groups) {
  for (const auto& g : groups)
    for (Parameter* p : g.params) p->zero_grad();
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables.
inline double clip_grad_norm(const std::vector<ParamGroup>& groups, double max_norm) {
  double sq = 0.0;
  for (const auto& g : groups)
    for (const Parameter* p : g.params)
      for (double v : p->grad.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& g : groups)
      for (Parameter* p : g.params)
        for (double& v : p->grad.data()) v *= f;
  }
  return norm;
}

/// Cosine decay from lr to 0 over total steps.
inline double cosine_lr(double lr, std::size_t step, std::size_t total) {
  if (total == 0) return lr;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * lr * (1.0 + std::cos(3.141592653589793 * t));
}

}  // namespace bpnas
