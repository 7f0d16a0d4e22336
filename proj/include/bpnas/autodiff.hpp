// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Tape owns every value produced during one forward pass. Nodes are appended
// in creation order, so the op list is topologically sorted by construction and
// backward() is a single reverse sweep. Persistent weights live in Parameter
// objects outside the tape; Tape::param() binds one as a leaf and backward()
// adds the leaf gradient into Parameter::grad exactly once.
//
// Broadcasting is limited to a leading batch dimension: for binary
// elementwise ops the right operand may have shape a.shape()[1:].
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpnas/tensor.hpp"

namespace bpnas {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline bool requires_grad() const;
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor v) { return push(std::move(v), false, nullptr); }

  /// Leaf whose gradient is tracked iff the tensor's requires_grad flag is set.
  Var leaf(Tensor v) {
    bool rg = v.requires_grad();
    return push(std::move(v), rg, nullptr);
  }

  Var variable(Tensor v) { return push(std::move(v), true, nullptr); }

  /// Binds a Parameter as a gradient-tracked leaf.
  Var param(Parameter& p) { return push(p.value, true, &p); }

  /// Uses a Parameter's current value as a constant (no gradient flows to it).
  Var frozen(const Parameter& p) { return push(p.value, false, nullptr); }

  Var record(Tensor value, Backward backward) {
    Var out = push(std::move(value), true, nullptr);
    ops_.push_back(std::move(backward));
    return out;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Mutable gradient buffer of a node; valid only during backward().
  Tensor& grad_buffer(std::size_t id) { return nodes_[id].grad; }

  /// Gradient of the last backward() root with respect to v. Zero-filled
  /// tensor when v does not require grad or no backward ran.
  Tensor grad(Var v) const {
    const auto& n = nodes_[v.id()];
    if (!n.grad.empty()) return n.grad;
    return Tensor(n.value.shape(), 0.0);
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t op_count() const noexcept { return ops_.size(); }

  void backward(Var root) {
    if (root.value().size() != 1) throw ShapeError("backward", root.shape(), "is not a scalar root");
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
      } else {
        n.grad = Tensor();
      }
    }
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    for (auto& n : nodes_) {
      if (n.sink == nullptr) continue;
      auto dst = n.sink->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* sink = nullptr;
  };

  Var push(Tensor v, bool rg, Parameter* sink) {
    nodes_.push_back(Node{std::move(v), Tensor(), rg, sink});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Backward> ops_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape(); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

inline void accumulate(Tape& t, const Var& v, std::span<const double> g) {
  if (!v.requires_grad()) return;
  auto dst = t.grad_buffer(v.id()).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

enum class Broadcast { same, batch };

inline Broadcast broadcast_kind(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (a.size() == b.size() + 1 && std::equal(b.begin(), b.end(), a.begin() + 1)) return Broadcast::batch;
  throw ShapeError(op, a, b);
}

template <class F, class DA, class DB>
Var binary(std::string_view op, Var a, Var b, F f, DA da, DB db) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto kind = broadcast_kind(op, av.shape(), bv.shape());
  const std::size_t inner = bv.size();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[kind == Broadcast::same ? i : i % inner]);
  if (!any_grad({a, b})) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [a, b, oid, kind, inner, da, db](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (a.requires_grad()) {
      Tensor& ga = tp.grad_buffer(a.id());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * da(av[i], bv[kind == Broadcast::same ? i : i % inner]);
    }
    if (b.requires_grad()) {
      Tensor& gb = tp.grad_buffer(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t j = kind == Broadcast::same ? i : i % inner;
        gb[j] += g[i] * db(av[i], bv[j]);
      }
    }
  });
}

template <class F, class DF>
Var unary(Var x, F f, DF df) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, oid, df](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& xv = x.value();
    const Tensor& yv = tp.value(oid);
    Tensor& gx = tp.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

inline void require_scalar(std::string_view op, const Var& s) {
  if (s.value().size() != 1) throw ShapeError(op, s.shape(), "must be a scalar");
}

}  // namespace detail

// Elementwise arithmetic ----------------------------------------------------

inline Var add(Var a, Var b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var add_scalar(Var x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var mul_scalar(Var x, double c) {
  return detail::unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

inline Var neg(Var x) { return mul_scalar(x, -1.0); }

/// x * s for a scalar node s.
inline Var scale(Var x, Var s) {
  detail::require_scalar("scale", s);
  Tape& t = x.tape();
  const double sv = s.value()[0];
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * sv;
  if (!detail::any_grad({x, s})) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, s, oid](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& xv = x.value();
    if (x.requires_grad()) {
      Tensor& gx = tp.grad_buffer(x.id());
      const double sv = s.value()[0];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (s.requires_grad()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      tp.grad_buffer(s.id())[0] += acc;
    }
  });
}

// Elementwise nonlinearities ------------------------------------------------

inline Var relu(Var x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw Error("log: non-positive input " + std::to_string(v));
  }
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v >= 0.0)) throw Error("sqrt: negative input " + std::to_string(v));
  }
  return detail::unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

/// Elementwise function with a caller-supplied derivative f'(x).
template <class F, class DF>
Var map(Var x, F f, DF df) {
  return detail::unary(x, std::move(f), [df = std::move(df)](double v, double) { return df(v); });
}

// Clamp with a custom gradient hook ------------------------------------------
//
// Hook must provide
//   double forward(double x, double alpha) const;
//   std::pair<double, double> grad(double x, double alpha) const;  // (dy/dx, dy/dalpha)
// The quantize module installs straight-through rules here.

/// Plain symmetric clamp to [-alpha, alpha] with its exact subgradient.
struct SymmetricClamp {
  double forward(double x, double a) const { return std::clamp(x, -a, a); }
  std::pair<double, double> grad(double x, double a) const {
    if (x >= a) return {0.0, 1.0};
    if (x <= -a) return {0.0, -1.0};
    return {1.0, 0.0};
  }
};

template <class Hook = SymmetricClamp>
Var clamp(Var x, Var alpha, Hook hook = {}) {
  detail::require_scalar("clamp", alpha);
  Tape& t = x.tape();
  const double a = alpha.value()[0];
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = hook.forward(xv[i], a);
  if (!detail::any_grad({x, alpha})) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, alpha, oid, hook](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& xv = x.value();
    const double a = alpha.value()[0];
    double ga = 0.0;
    Tensor* gx = x.requires_grad() ? &tp.grad_buffer(x.id()) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto [dx, da] = hook.grad(xv[i], a);
      if (gx) (*gx)[i] += g[i] * dx;
      ga += g[i] * da;
    }
    if (alpha.requires_grad()) tp.grad_buffer(alpha.id())[0] += ga;
  });
}

// Reductions ------------------------------------------------------------------

inline Var sum(Var x) {
  Tape& t = x.tape();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  if (!x.requires_grad()) return t.constant(Tensor::scalar(s));
  std::size_t oid = t.node_count();
  return t.record(Tensor::scalar(s), [x, oid](Tape& tp) {
    const double g = tp.grad_buffer(oid)[0];
    for (double& v : tp.grad_buffer(x.id()).data()) v += g;
  });
}

inline Var mean(Var x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Inner product of two equally shaped tensors.
inline Var dot(Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError("dot", a.shape(), b.shape());
  return sum(mul(a, b));
}

/// Element i of x (flat index) as a scalar node.
inline Var index(Var x, std::size_t i) {
  if (i >= x.value().size()) throw ShapeError("index", x.shape(), "index " + std::to_string(i) + " out of range");
  Tape& t = x.tape();
  Tensor out = Tensor::scalar(x.value()[i]);
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, i, oid](Tape& tp) { tp.grad_buffer(x.id())[i] += tp.grad_buffer(oid)[0]; });
}

/// Scalar reduction with a caller-supplied value and gradient.
template <class F, class G>
Var reduce(Var x, F value, G gradient) {
  Tape& t = x.tape();
  Tensor out = Tensor::scalar(value(x.value().data()));
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, oid, gradient](Tape& tp) {
    const double g = tp.grad_buffer(oid)[0];
    std::vector<double> d = gradient(x.value().data());
    Tensor& gx = tp.grad_buffer(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += g * d[i];
  });
}

// Shape ops -------------------------------------------------------------------

inline Var reshape(Var x, Shape shape) {
  Tape& t = x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, oid](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    Tensor& gx = tp.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Var transpose(Var x) {
  if (x.shape().size() != 2) throw ShapeError("transpose", x.shape(), "is not 2-D");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tape& t = x.tape();
  Tensor out(Shape{c, r});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, r, c, oid](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    Tensor& gx = tp.grad_buffer(x.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

// Linear algebra --------------------------------------------------------------

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      if (a == 0.0) continue;
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void gemm_tn(std::size_t M, std::size_t K, std::size_t N, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* b = B + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      if (a == 0.0) continue;
      double* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) throw ShapeError("matmul", as, bs);
  const std::size_t M = as[0], K = as[1], N = bs[1];
  Tape& t = a.tape();
  Tensor out(Shape{M, N}, 0.0);
  detail::gemm_nn(M, K, N, a.value().data().data(), b.value().data().data(), out.data().data());
  if (!detail::any_grad({a, b})) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [a, b, M, K, N, oid](Tape& tp) {
    const double* g = tp.grad_buffer(oid).data().data();
    if (a.requires_grad())  // dA = G B^T
      detail::gemm_nt(M, N, K, g, b.value().data().data(), tp.grad_buffer(a.id()).data().data());
    if (b.requires_grad())  // dB = A^T G
      detail::gemm_tn(M, K, N, a.value().data().data(), g, tp.grad_buffer(b.id()).data().data());
  });
}

/// y = x W^T + bias for x [N,in], W [out,in], bias [out].
inline Var linear(Var x, Var w, std::optional<Var> bias = std::nullopt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) throw ShapeError("linear", xs, ws);
  const std::size_t M = xs[0], K = xs[1], N = ws[0];
  Tape& t = x.tape();
  Tensor out(Shape{M, N}, 0.0);
  detail::gemm_nt(M, K, N, x.value().data().data(), w.value().data().data(), out.data().data());
  Var y = detail::any_grad({x, w}) ? Var() : t.constant(std::move(out));
  if (!y.valid()) {
    std::size_t oid = t.node_count();
    y = t.record(std::move(out), [x, w, M, K, N, oid](Tape& tp) {
      const double* g = tp.grad_buffer(oid).data().data();
      if (x.requires_grad())  // dX = G W
        detail::gemm_nn(M, N, K, g, w.value().data().data(), tp.grad_buffer(x.id()).data().data());
      if (w.requires_grad())  // dW = G^T X
        detail::gemm_tn(M, N, K, g, x.value().data().data(), tp.grad_buffer(w.id()).data().data());
    });
  }
  if (bias) {
    if (bias->shape() != Shape{N}) throw ShapeError("linear", bias->shape(), Shape{N});
    y = add(y, *bias);
  }
  return y;
}

/// 2-D convolution, stride 1, symmetric zero padding.
/// x [N,Ci,H,W], w [Co,Ci,K,K], optional bias [Co] -> [N,Co,H+2p-K+1,W+2p-K+1].
inline Var conv2d(Var x, Var w, std::optional<Var> bias = std::nullopt, std::size_t padding = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] != ws[3]) throw ShapeError("conv2d", xs, ws);
  const std::size_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const std::size_t Co = ws[0], K = ws[2];
  if (H + 2 * padding < K || W + 2 * padding < K) throw ShapeError("conv2d", xs, ws);
  const std::size_t Ho = H + 2 * padding - K + 1, Wo = W + 2 * padding - K + 1;
  if (bias && bias->shape() != Shape{Co}) throw ShapeError("conv2d", bias->shape(), Shape{Co});

  // Visits every (output, input, weight) index triple of the convolution.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t kh = 0; kh < K; ++kh)
            for (std::size_t kw = 0; kw < K; ++kw) {
              const std::size_t widx = ((co * Ci + ci) * K + kh) * K + kw;
              for (std::size_t oh = 0; oh < Ho; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh + kh) - static_cast<std::ptrdiff_t>(padding);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow + kw) - static_cast<std::ptrdiff_t>(padding);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t oidx = ((n * Co + co) * Ho + oh) * Wo + ow;
                  const std::size_t iidx = ((n * Ci + ci) * H + static_cast<std::size_t>(ih)) * W +
                                           static_cast<std::size_t>(iw);
                  fn(oidx, iidx, widx);
                }
              }
            }
  };

  Tape& t = x.tape();
  Tensor out(Shape{N, Co, Ho, Wo}, 0.0);
  {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += xv[i] * wv[k]; });
    if (bias) {
      const Tensor& bv = bias->value();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[(i / (Ho * Wo)) % Co];
    }
  }
  const bool bias_grad = bias && bias->requires_grad();
  if (!detail::any_grad({x, w}) && !bias_grad) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  std::optional<Var> b = bias;
  return t.record(std::move(out), [x, w, b, oid, for_each_tap, Ho, Wo, Co](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    Tensor* gx = x.requires_grad() ? &tp.grad_buffer(x.id()) : nullptr;
    Tensor* gw = w.requires_grad() ? &tp.grad_buffer(w.id()) : nullptr;
    if (gx || gw) {
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
        if (gx) (*gx)[i] += g[o] * wv[k];
        if (gw) (*gw)[k] += g[o] * xv[i];
      });
    }
    if (b && b->requires_grad()) {
      Tensor& gb = tp.grad_buffer(b->id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[(i / (Ho * Wo)) % Co] += g[i];
    }
  });
}

// Softmax and losses ------------------------------------------------------------

namespace detail {

inline void softmax_rows(const Tensor& x, Tensor& y) {
  const std::size_t C = x.shape().back();
  const std::size_t R = x.size() / C;
  for (std::size_t r = 0; r < R; ++r) {
    const double* in = x.data().data() + r * C;
    double* out = y.data().data() + r * C;
    double m = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (out[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < C; ++c) out[c] /= z;
  }
}

}  // namespace detail

/// Softmax over the last axis (max-subtracted).
inline Var softmax(Var x) {
  Tape& t = x.tape();
  Tensor out(x.shape());
  detail::softmax_rows(x.value(), out);
  if (!x.requires_grad()) return t.constant(std::move(out));
  std::size_t oid = t.node_count();
  return t.record(std::move(out), [x, oid](Tape& tp) {
    const Tensor& g = tp.grad_buffer(oid);
    const Tensor& y = tp.value(oid);
    Tensor& gx = tp.grad_buffer(x.id());
    const std::size_t C = y.shape().back();
    for (std::size_t r = 0; r < y.size() / C; ++r) {
      double dotp = 0.0;
      for (std::size_t c = 0; c < C; ++c) dotp += g[r * C + c] * y[r * C + c];
      for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += y[r * C + c] * (g[r * C + c] - dotp);
    }
  });
}

/// Mean softmax cross-entropy of logits [N,C] against integer labels.
inline Var cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size())
    throw ShapeError("cross_entropy", s, Shape{labels.size()});
  const std::size_t N = s[0], C = s[1];
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= C) throw Error("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  Tensor prob(s);
  detail::softmax_rows(logits.value(), prob);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* row = logits.value().data().data() + n * C;
    double m = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - m);
    loss += m + std::log(z) - row[labels[n]];
  }
  loss /= static_cast<double>(N);
  Tape& t = logits.tape();
  if (!logits.requires_grad()) return t.constant(Tensor::scalar(loss));
  std::size_t oid = t.node_count();
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record(Tensor::scalar(loss), [logits, oid, prob = std::move(prob), lab = std::move(lab), N, C](Tape& tp) {
    const double g = tp.grad_buffer(oid)[0] / static_cast<double>(N);
    Tensor& gx = tp.grad_buffer(logits.id());
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        double d = prob[n * C + c] - (static_cast<int>(c) == lab[n] ? 1.0 : 0.0);
        gx[n * C + c] += g * d;
      }
    }
  });
}

}  // namespace bpnas
