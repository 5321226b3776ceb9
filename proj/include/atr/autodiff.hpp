// Copyright 2026 The atr Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over dense double arrays.
//
// A Tape owns every value produced during a forward pass. Values whose
// inputs include at least one tracked array are tracked themselves and
// carry a gradient buffer and a backward rule. Nodes are appended in
// execution order, so the tape is always topologically sorted and the
// backward pass is a reverse sweep.
//
// Shape rules:
//   matmul        [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]
//   add           equal shapes, or [m,n] + [n] (bias row)
//   sub/mul/div   equal shapes
//   unary ops     any shape, output has the input shape
//   row_softmax   [n] or [m,n], normalized along the last axis
//   masked_*      [rows,cols] with a rows-long 0/1 mask -> [cols]
//   reshape       any shape with equal element count
//   concat        all [n_i] -> [sum n_i]; all [r_i,c] -> [sum r_i,c]
//   l2_normalize  [n] or [m,n], along the last axis
//   transpose     [m,n] -> [n,m]
//   sum           any -> [1]
//   gather        any -> out_shape, picking flat indices

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atr/array.hpp"
#include "atr/error.hpp"

namespace atr {

class Tape;

enum class OpKind {
  leaf,
  matmul,
  add,
  sub,
  mul,
  div,
  exp,
  log,
  tanh,
  sigmoid,
  relu,
  row_softmax,
  masked_sum,
  masked_mean,
  masked_max,
  reshape,
  concat,
  l2_normalize,
  transpose,
  scale,
  sum,
  gather,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu-hinge";
    case OpKind::row_softmax: return "row-softmax";
    case OpKind::masked_sum: return "masked-sum";
    case OpKind::masked_mean: return "masked-mean";
    case OpKind::masked_max: return "masked-max";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::l2_normalize: return "l2-normalize";
    case OpKind::transpose: return "transpose";
    case OpKind::scale: return "scalar-scale";
    case OpKind::sum: return "sum";
    case OpKind::gather: return "gather";
  }
  return "?";
}

/// Operands at or below this magnitude are rejected by log and div.
inline constexpr double kDomainTolerance = 1e-12;
/// Norm floor used by l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

/// Handle to a value on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Array& value() const;
  inline const Shape& shape() const;
  inline bool tracked() const;
  inline std::span<const double> grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardRule = std::function<void(Tape&, std::size_t self)>;

struct Node {
  OpKind kind = OpKind::leaf;
  Array value;
  bool tracked = false;
  std::vector<double> grad;
  std::vector<std::size_t> inputs;
  BackwardRule backward;
};

/// The computation record. Not copyable or movable: Vars point into it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input; receives gradients.
  Var leaf(Array value) { return push(OpKind::leaf, std::move(value), true, {}, {}); }

  /// Non-differentiable input.
  Var constant(Array value) {
    return push(OpKind::leaf, std::move(value), false, {}, {});
  }

  /// Appends the result of an operation. The node is tracked iff any input
  /// is tracked; the backward rule is dropped otherwise.
  Var record(OpKind kind, Array value, std::vector<std::size_t> inputs,
             BackwardRule rule) {
    bool tracked = false;
    for (auto in : inputs) tracked = tracked || nodes_.at(in).tracked;
    if (!tracked) {
      rule = nullptr;
      inputs.clear();
    }
    return push(kind, std::move(value), tracked, std::move(inputs),
                std::move(rule));
  }

  /// Gradients of the scalar `root` with respect to every tracked node.
  /// Intermediate gradients are reset on each call; leaf gradients
  /// accumulate across calls until zero_grad().
  void backward(Var root) {
    const Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) {
      throw ShapeError("backward root must be scalar, got shape " +
                       to_string(r.value.shape()));
    }
    if (!r.tracked) throw ShapeError("backward root is not tracked");
    for (auto& n : nodes_) {
      if (n.tracked && n.kind != OpKind::leaf) {
        std::fill(n.grad.begin(), n.grad.end(), 0.0);
      }
    }
    nodes_[root.id()].grad[0] += 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.tracked && n.backward) n.backward(*this, i);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of node `id` when it is tracked, else null.
  double* grad_if_tracked(std::size_t id) {
    Node& n = nodes_[id];
    return n.tracked ? n.grad.data() : nullptr;
  }

 private:
  Var push(OpKind kind, Array value, bool tracked,
           std::vector<std::size_t> inputs, BackwardRule rule) {
    Node n;
    n.kind = kind;
    n.tracked = tracked;
    if (tracked) n.grad.assign(value.size(), 0.0);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(rule);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Array& Var::value() const { return tape_->value(id_); }
inline const Shape& Var::shape() const { return tape_->value(id_).shape(); }
inline bool Var::tracked() const { return tape_->node(id_).tracked; }
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ShapeError("operands live on different tapes");
}

inline std::string shapes_msg(std::string_view op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
         to_string(b);
}

inline void require_rank(std::string_view op, const Shape& s, std::size_t r) {
  if (s.size() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) +
                     ", got shape " + to_string(s));
  }
}

// Rows/cols view of a rank-1 or rank-2 array along its last axis.
inline std::pair<std::size_t, std::size_t> rows_cols(std::string_view op,
                                                     const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " +
                   to_string(s));
}

inline double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Array& A = a.value();
  const Array& B = b.value();
  detail::require_rank("matmul", A.shape(), 2);
  const std::size_t m = A.dim(0), k = A.dim(1);
  if (B.rank() < 1 || B.rank() > 2 || B.dim(0) != k) {
    throw ShapeError(detail::shapes_msg("matmul", A.shape(), B.shape()));
  }
  const std::size_t n = B.rank() == 2 ? B.dim(1) : 1;
  Array C(B.rank() == 2 ? Shape{m, n} : Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      OpKind::matmul, std::move(C), {ia, ib},
      [ia, ib, m, k, n](Tape& t, std::size_t self) {
        const double* g = t.grad(self).data();
        const double* Av = t.value(ia).data().data();
        const double* Bv = t.value(ib).data().data();
        if (double* ga = t.grad_if_tracked(ia)) {
          // dA = G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bv[p * n + j];
              ga[i * k + p] += s;
            }
        }
        if (double* gb = t.grad_if_tracked(ib)) {
          // dB = A^T * G
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = Av[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
            }
        }
      });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Array& A = a.value();
  const Array& B = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (A.shape() == B.shape()) {
    Array C(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] + B[i];
    return a.tape().record(OpKind::add, std::move(C), {ia, ib},
                           [ia, ib](Tape& t, std::size_t self) {
                             auto g = t.grad(self);
                             for (auto id : {ia, ib})
                               if (double* gx = t.grad_if_tracked(id))
                                 for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
  }
  if (A.rank() == 2 && B.rank() == 1 && B.dim(0) == A.dim(1)) {
    const std::size_t m = A.dim(0), n = A.dim(1);
    Array C(A.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] = A[i * n + j] + B[j];
    return a.tape().record(OpKind::add, std::move(C), {ia, ib},
                           [ia, ib, m, n](Tape& t, std::size_t self) {
                             auto g = t.grad(self);
                             if (double* ga = t.grad_if_tracked(ia))
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             if (double* gb = t.grad_if_tracked(ib))
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                           });
  }
  throw ShapeError(detail::shapes_msg("add", A.shape(), B.shape()));
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.shape() != B.shape()) throw ShapeError(detail::shapes_msg("sub", A.shape(), B.shape()));
  Array C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] - B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::sub, std::move(C), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           if (double* ga = t.grad_if_tracked(ia))
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           if (double* gb = t.grad_if_tracked(ib))
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                         });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.shape() != B.shape()) throw ShapeError(detail::shapes_msg("mul", A.shape(), B.shape()));
  Array C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::mul, std::move(C), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const Array& Av = t.value(ia);
                           const Array& Bv = t.value(ib);
                           if (double* ga = t.grad_if_tracked(ia))
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Bv[i];
                           if (double* gb = t.grad_if_tracked(ib))
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * Av[i];
                         });
}

inline Var div(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.shape() != B.shape()) throw ShapeError(detail::shapes_msg("div", A.shape(), B.shape()));
  Array C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    if (std::abs(B[i]) <= kDomainTolerance) {
      throw DomainError("div: divisor at index " + std::to_string(i) +
                        " is zero within tolerance (" + std::to_string(B[i]) + ")");
    }
    C[i] = A[i] / B[i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(OpKind::div, std::move(C), {ia, ib},
                         [ia, ib](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           const Array& Av = t.value(ia);
                           const Array& Bv = t.value(ib);
                           if (double* ga = t.grad_if_tracked(ia))
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / Bv[i];
                           if (double* gb = t.grad_if_tracked(ib))
                             for (std::size_t i = 0; i < g.size(); ++i)
                               gb[i] -= g[i] * Av[i] / (Bv[i] * Bv[i]);
                         });
}

namespace detail {
// Elementwise op whose derivative is expressed through input x and output y.
template <class F, class D>
Var pointwise(Var a, OpKind kind, F&& f, D&& dydx) {
  const Array& x = a.value();
  Array y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(kind, std::move(y), {ia},
                         [ia, dydx](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           const Array& xv = t.value(ia);
                           const Array& yv = t.value(self);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] += g[i] * dydx(xv[i], yv[i]);
                         });
}
}  // namespace detail

inline Var exp(Var a) {
  return detail::pointwise(
      a, OpKind::exp, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Var log(Var a) {
  const Array& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= kDomainTolerance) {
      throw DomainError("log: operand at index " + std::to_string(i) +
                        " is non-positive within tolerance (" + std::to_string(x[i]) + ")");
    }
  }
  return detail::pointwise(
      a, OpKind::log, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

inline Var tanh(Var a) {
  return detail::pointwise(
      a, OpKind::tanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::pointwise(
      a, OpKind::sigmoid, [](double x) { return detail::stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

/// max(0, x); the derivative at exactly 0 is taken as 0.
inline Var relu(Var a) {
  return detail::pointwise(
      a, OpKind::relu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var scale(Var a, double s) {
  return detail::pointwise(
      a, OpKind::scale, [s](double x) { return s * x; },
      [s](double, double) { return s; });
}

inline Var row_softmax(Var a) {
  const Array& X = a.value();
  const auto [m, n] = detail::rows_cols("row-softmax", X.shape());
  Array Y(X.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = X.data().data() + i * n;
    double* y = Y.data().data() + i * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::row_softmax, std::move(Y), {ia},
                         [ia, m = m, n = n](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           const double* g = t.grad(self).data();
                           const double* y = t.value(self).data().data();
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                           }
                         });
}

using Mask = std::vector<std::uint8_t>;

/// Mask whose first `length` of `rows` entries are set.
inline Mask prefix_mask(std::size_t rows, std::size_t length) {
  Mask m(rows, 0);
  std::fill_n(m.begin(), std::min(rows, length), std::uint8_t{1});
  return m;
}

namespace detail {
inline std::size_t check_mask(std::string_view op, const Array& X, const Mask& mask) {
  require_rank(op, X.shape(), 2);
  if (mask.size() != X.dim(0)) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                     " does not match " + std::to_string(X.dim(0)) + " rows of " +
                     to_string(X.shape()));
  }
  const auto active = static_cast<std::size_t>(std::count_if(
      mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
  if (active == 0) throw ShapeError(std::string(op) + ": mask selects no rows");
  return active;
}

// Sum of selected rows divided by `divisor`.
inline Var masked_linear(Var a, const Mask& mask, OpKind kind, double divisor) {
  const Array& X = a.value();
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  Array Y({cols});
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < cols; ++j) Y[j] += X[i * cols + j];
  }
  if (divisor != 1.0)
    for (std::size_t j = 0; j < cols; ++j) Y[j] /= divisor;
  const std::size_t ia = a.id();
  return a.tape().record(kind, std::move(Y), {ia},
                         [ia, mask, rows, cols, divisor](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           for (std::size_t i = 0; i < rows; ++i) {
                             if (!mask[i]) continue;
                             for (std::size_t j = 0; j < cols; ++j)
                               ga[i * cols + j] += g[j] / divisor;
                           }
                         });
}
}  // namespace detail

inline Var masked_sum(Var a, const Mask& mask) {
  detail::check_mask("masked-sum", a.value(), mask);
  return detail::masked_linear(a, mask, OpKind::masked_sum, 1.0);
}

/// Mean over selected rows; divides by the number of selected rows.
inline Var masked_mean(Var a, const Mask& mask) {
  const std::size_t active = detail::check_mask("masked-mean", a.value(), mask);
  return detail::masked_linear(a, mask, OpKind::masked_mean, static_cast<double>(active));
}

/// Per-column maximum over selected rows. Ties route the gradient to the
/// first maximizing row.
inline Var masked_max(Var a, const Mask& mask) {
  const Array& X = a.value();
  detail::check_mask("masked-max", X, mask);
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  Array Y({cols}, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < cols; ++j) {
      if (X[i * cols + j] > Y[j]) {
        Y[j] = X[i * cols + j];
        argmax[j] = i;
      }
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::masked_max, std::move(Y), {ia},
                         [ia, argmax = std::move(argmax), cols](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           for (std::size_t j = 0; j < cols; ++j) ga[argmax[j] * cols + j] += g[j];
                         });
}

inline Var reshape(Var a, Shape shape) {
  const Array& X = a.value();
  if (numel(shape) != X.size()) throw ShapeError(detail::shapes_msg("reshape", X.shape(), shape));
  Array Y(std::move(shape), X.storage());
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::reshape, std::move(Y), {ia},
                         [ia](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  if (first.size() > 2) throw ShapeError("concat: rank > 2 unsupported, got " + to_string(first));
  std::size_t lead = 0;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size() || (s.size() == 2 && s[1] != first[1])) {
      throw ShapeError(detail::shapes_msg("concat", first, s));
    }
    lead += s[0];
    ids.push_back(p.id());
  }
  Shape out = first;
  out[0] = lead;
  std::vector<double> data;
  data.reserve(numel(out));
  for (const auto& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  return tape.record(OpKind::concat, Array(std::move(out), std::move(data)), ids,
                     [ids](Tape& t, std::size_t self) {
                       auto g = t.grad(self);
                       std::size_t offset = 0;
                       for (auto id : ids) {
                         const std::size_t n = t.value(id).size();
                         if (double* gx = t.grad_if_tracked(id))
                           for (std::size_t i = 0; i < n; ++i) gx[i] += g[offset + i];
                         offset += n;
                       }
                     });
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// x / max(||x||, eps) along the last axis. Zero rows map to zero and
/// raise a warning.
inline Var l2_normalize(Var a) {
  const Array& X = a.value();
  const auto [m, n] = detail::rows_cols("l2-normalize", X.shape());
  Array Y(X.shape());
  std::vector<double> denom(m);
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += X[i * n + j] * X[i * n + j];
    const double norm = std::sqrt(ss);
    if (norm <= kNormEpsilon) ++degenerate;
    denom[i] = std::max(norm, kNormEpsilon);
    for (std::size_t j = 0; j < n; ++j) Y[i * n + j] = X[i * n + j] / denom[i];
  }
  if (degenerate) {
    warn("l2-normalize: " + std::to_string(degenerate) + " of " + std::to_string(m) +
         " rows have zero norm and were mapped to zero");
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      OpKind::l2_normalize, std::move(Y), {ia},
      [ia, m = m, n = n, denom = std::move(denom)](Tape& t, std::size_t self) {
        double* ga = t.grad_if_tracked(ia);
        if (!ga) return;
        const double* g = t.grad(self).data();
        const double* y = t.value(self).data().data();
        for (std::size_t i = 0; i < m; ++i) {
          if (denom[i] <= kNormEpsilon) {
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] / denom[i];
            continue;
          }
          // (I - y y^T) g / ||x||
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            ga[i * n + j] += (g[i * n + j] - y[i * n + j] * dot) / denom[i];
        }
      });
}

inline Var transpose(Var a) {
  const Array& X = a.value();
  detail::require_rank("transpose", X.shape(), 2);
  const std::size_t m = X.dim(0), n = X.dim(1);
  Array Y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y[j * m + i] = X[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::transpose, std::move(Y), {ia},
                         [ia, m, n](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                         });
}

inline Var sum(Var a) {
  const Array& X = a.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::sum, Array::scalar(s), {ia},
                         [ia](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           const double g = t.grad(self)[0];
                           const std::size_t n = t.value(ia).size();
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g;
                         });
}

/// out[i] = a.flat[indices[i]], shaped as `shape`.
inline Var gather(Var a, std::vector<std::size_t> indices, Shape shape) {
  const Array& X = a.value();
  if (numel(shape) != indices.size()) {
    throw ShapeError("gather: " + std::to_string(indices.size()) +
                     " indices cannot fill shape " + to_string(shape));
  }
  Array Y(std::move(shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= X.size()) {
      throw ShapeError("gather: index " + std::to_string(indices[i]) +
                       " out of range for shape " + to_string(X.shape()));
    }
    Y[i] = X[indices[i]];
  }
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::gather, std::move(Y), {ia},
                         [ia, indices = std::move(indices)](Tape& t, std::size_t self) {
                           double* ga = t.grad_if_tracked(ia);
                           if (!ga) return;
                           auto g = t.grad(self);
                           for (std::size_t i = 0; i < indices.size(); ++i) ga[indices[i]] += g[i];
                         });
}

/// Rows [first, first+count) of a rank-2 array.
inline Var slice_rows(Var a, std::size_t first, std::size_t count) {
  const Array& X = a.value();
  detail::require_rank("slice_rows", X.shape(), 2);
  const std::size_t cols = X.dim(1);
  if (count == 0 || first + count > X.dim(0)) {
    throw ShapeError("slice_rows: rows [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     to_string(X.shape()));
  }
  std::vector<std::size_t> idx(count * cols);
  std::iota(idx.begin(), idx.end(), first * cols);
  return gather(a, std::move(idx), Shape{count, cols});
}

// ---------------------------------------------------------------------------
// Uniform dispatch by kind.

struct OpAttrs {
  double scalar = 1.0;
  Mask mask;
  Shape shape;
  std::vector<std::size_t> indices;
};

inline Var forward_op(OpKind kind, std::span<const Var> in, const OpAttrs& attrs = {}) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                       " operands, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::div: need(2); return div(in[0], in[1]);
    case OpKind::exp: need(1); return exp(in[0]);
    case OpKind::log: need(1); return log(in[0]);
    case OpKind::tanh: need(1); return tanh(in[0]);
    case OpKind::sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::relu: need(1); return relu(in[0]);
    case OpKind::row_softmax: need(1); return row_softmax(in[0]);
    case OpKind::masked_sum: need(1); return masked_sum(in[0], attrs.mask);
    case OpKind::masked_mean: need(1); return masked_mean(in[0], attrs.mask);
    case OpKind::masked_max: need(1); return masked_max(in[0], attrs.mask);
    case OpKind::reshape: need(1); return reshape(in[0], attrs.shape);
    case OpKind::concat: return concat(in);
    case OpKind::l2_normalize: need(1); return l2_normalize(in[0]);
    case OpKind::transpose: need(1); return transpose(in[0]);
    case OpKind::scale: need(1); return scale(in[0], attrs.scalar);
    case OpKind::sum: need(1); return sum(in[0]);
    case OpKind::gather: need(1); return gather(in[0], attrs.indices, attrs.shape);
    case OpKind::leaf: break;
  }
  throw ShapeError("forward_op: leaf is not an operation");
}

}  // namespace atr
