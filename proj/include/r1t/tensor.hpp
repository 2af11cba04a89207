#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "r1t/errors.hpp"
#include "r1t/kernels.hpp"

namespace r1t {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace autograd {

// Graph recording is on by default; NoGradGuard turns it off for pure
// inference (validation, decoding), which skips node bookkeeping entirely.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
};

// Post-op NaN/Inf scan. Defaults to on in debug builds; tests can force it.
inline bool& debug_checks() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

}  // namespace autograd

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily; always same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;  // reads this->grad, accumulates into inputs
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T v) {
    auto n = std::make_shared<detail::Node<T>>();
    n->value.assign(static_cast<size_t>(numel_of(shape)), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError(msg("data size ", data.size(), " does not match shape ", shape_str(shape)));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<T> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& raw_data() { return node_->value; }  // leaf mutation (init, optimizer steps)
  const char* op() const { return node_->op; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node_->grad.empty()) throw ContractError("tensor has no gradient");
    return node_->grad;
  }
  std::vector<T>& raw_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError(msg("item() on non-scalar tensor ", shape_str(shape())));
    return node_->value[0];
  }

  // Reverse-mode sweep from a scalar loss. Parameter (leaf) gradients
  // accumulate across calls; intermediate gradients are reset each call.
  void backward() const {
    if (numel() != 1)
      throw ContractError(msg("backward requires a scalar loss, got ", shape_str(shape())));
    std::vector<detail::Node<T>*> order;
    topo_order(order);
    for (auto* n : order) {
      if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
    }
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto* n = *it;
      if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
  }

  NodePtr node() const { return node_; }

  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  void topo_order(std::vector<detail::Node<T>*>& order) const {
    // iterative post-order DFS: inputs appear before consumers
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        auto* child = n->inputs[next].get();
        ++next;
        if (seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  NodePtr node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// op construction helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
  if (!autograd::debug_checks()) return;
  for (const T x : v) {
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError(msg("non-finite value produced by op '", op, "'"));
  }
}

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool track = autograd::grad_enabled();
  bool any_grad = false;
  if (track) {
    for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
  }
  if (track && any_grad) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// dst.grad += v (allocating lazily), only when the input tracks gradients
template <typename T>
bool wants_grad(Node<T>& in) {
  return in.requires_grad;
}

}  // namespace detail

// Escape hatch for composing new differentiable ops outside this header
// (also used by tests for fault injection against grad_check).
template <typename T>
Tensor<T> custom_op(const char* name, Shape shape, std::vector<T> value,
                    std::vector<Tensor<T>> inputs,
                    std::function<void(detail::Node<T>&)> backward) {
  return detail::make_op<T>(name, std::move(shape), std::move(value), std::move(inputs),
                            std::move(backward));
}

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError(msg("matmul expects [m,k]x[k,n], got ", shape_str(a.shape()), " x ",
                         shape_str(b.shape())));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<size_t>(m * n));
  kernels::matmul_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_op<T>(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
        auto& ga = *self.inputs[0];
        auto& gb = *self.inputs[1];
        if (detail::wants_grad(ga)) {
          ga.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(m * k));
          kernels::matmul_nt(self.grad.data(), gb.value.data(), tmp.data(), m, n, k);
          kernels::for_each(m * k, [&](int64_t i) { ga.grad[i] += tmp[i]; });
        }
        if (detail::wants_grad(gb)) {
          gb.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(k * n));
          kernels::matmul_tn(ga.value.data(), self.grad.data(), tmp.data(), k, m, n);
          kernels::for_each(k * n, [&](int64_t i) { gb.grad[i] += tmp[i]; });
        }
      });
}

// y = x * W^T with W stored [n,k]; the layout used by linear layers.
template <typename T>
Tensor<T> matmul_t(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError(msg("matmul_t expects [m,k]x[n,k], got ", shape_str(x.shape()), " x ",
                         shape_str(w.shape())));
  const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  std::vector<T> out(static_cast<size_t>(m * n));
  kernels::matmul_nt(x.data().data(), w.data().data(), out.data(), m, k, n);
  return detail::make_op<T>(
      "matmul_t", {m, n}, std::move(out), {x, w}, [m, k, n](detail::Node<T>& self) {
        auto& gx = *self.inputs[0];
        auto& gw = *self.inputs[1];
        if (detail::wants_grad(gx)) {
          gx.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(m * k));
          kernels::matmul_nn(self.grad.data(), gw.value.data(), tmp.data(), m, n, k);
          kernels::for_each(m * k, [&](int64_t i) { gx.grad[i] += tmp[i]; });
        }
        if (detail::wants_grad(gw)) {
          gw.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(n * k));
          kernels::matmul_tn(self.grad.data(), gx.value.data(), tmp.data(), n, m, k);
          kernels::for_each(n * k, [&](int64_t i) { gw.grad[i] += tmp[i]; });
        }
      });
}

// Batched [N,m,k] x [N,k,n] -> [N,m,n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError(msg("bmm expects [N,m,k]x[N,k,n], got ", shape_str(a.shape()), " x ",
                         shape_str(b.shape())));
  const int64_t N = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(static_cast<size_t>(N * m * n));
  kernels::bmm_nn(a.data().data(), b.data().data(), out.data(), N, m, k, n);
  return detail::make_op<T>(
      "bmm", {N, m, n}, std::move(out), {a, b}, [N, m, k, n](detail::Node<T>& self) {
        auto& ga = *self.inputs[0];
        auto& gb = *self.inputs[1];
        if (detail::wants_grad(ga)) {
          ga.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(N * m * k));
          kernels::bmm_nt(self.grad.data(), gb.value.data(), tmp.data(), N, m, n, k);
          kernels::for_each(N * m * k, [&](int64_t i) { ga.grad[i] += tmp[i]; });
        }
        if (detail::wants_grad(gb)) {
          gb.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(N * k * n));
          kernels::bmm_tn(ga.value.data(), self.grad.data(), tmp.data(), N, k, m, n);
          kernels::for_each(N * k * n, [&](int64_t i) { gb.grad[i] += tmp[i]; });
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(
        msg(op, " expects equal shapes, got ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] + pb[i]; });
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b}, [n](detail::Node<T>& self) {
    for (int idx = 0; idx < 2; ++idx) {
      auto& in = *self.inputs[idx];
      if (!detail::wants_grad(in)) continue;
      in.ensure_grad();
      T* g = in.grad.data();
      const T* sg = self.grad.data();
      kernels::for_each(n, [&](int64_t i) { g[i] += sg[i]; });
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] - pb[i]; });
  return detail::make_op<T>("sub", a.shape(), std::move(out), {a, b}, [n](detail::Node<T>& self) {
    auto& ia = *self.inputs[0];
    auto& ib = *self.inputs[1];
    const T* sg = self.grad.data();
    if (detail::wants_grad(ia)) {
      ia.ensure_grad();
      T* g = ia.grad.data();
      kernels::for_each(n, [&](int64_t i) { g[i] += sg[i]; });
    }
    if (detail::wants_grad(ib)) {
      ib.ensure_grad();
      T* g = ib.grad.data();
      kernels::for_each(n, [&](int64_t i) { g[i] -= sg[i]; });
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] * pb[i]; });
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b}, [n](detail::Node<T>& self) {
    auto& ia = *self.inputs[0];
    auto& ib = *self.inputs[1];
    const T* sg = self.grad.data();
    if (detail::wants_grad(ia)) {
      ia.ensure_grad();
      T* g = ia.grad.data();
      const T* other = ib.value.data();
      kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * other[i]; });
    }
    if (detail::wants_grad(ib)) {
      ib.ensure_grad();
      T* g = ib.grad.data();
      const T* other = ia.value.data();
      kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * other[i]; });
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] + s; });
  return detail::make_op<T>("add_scalar", a.shape(), std::move(out), {a},
                            [n](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              kernels::for_each(n, [&](int64_t i) { g[i] += sg[i]; });
                            });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] * s; });
  return detail::make_op<T>("mul_scalar", a.shape(), std::move(out), {a},
                            [n, s](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * s; });
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = pa[i] > T(0) ? pa[i] : T(0); });
  return detail::make_op<T>("relu", a.shape(), std::move(out), {a}, [n](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!detail::wants_grad(in)) return;
    in.ensure_grad();
    T* g = in.grad.data();
    const T* sg = self.grad.data();
    const T* x = in.value.data();
    // gate strictly on input > 0
    kernels::for_each(n, [&](int64_t i) { g[i] += x[i] > T(0) ? sg[i] : T(0); });
  });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = std::tanh(pa[i]); });
  return detail::make_op<T>("tanh", a.shape(), std::move(out), {a}, [n](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!detail::wants_grad(in)) return;
    in.ensure_grad();
    T* g = in.grad.data();
    const T* sg = self.grad.data();
    const T* y = self.value.data();
    kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * (T(1) - y[i] * y[i]); });
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  kernels::for_each(n, [&](int64_t i) {
    const T x = pa[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  });
  return detail::make_op<T>("sigmoid", a.shape(), std::move(out), {a}, [n](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!detail::wants_grad(in)) return;
    in.ensure_grad();
    T* g = in.grad.data();
    const T* sg = self.grad.data();
    const T* y = self.value.data();
    kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * y[i] * (T(1) - y[i]); });
  });
}

// ---------------------------------------------------------------------------
// broadcasting add (b dims must be 1 or equal to a's)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// strides of b viewed through a's index space: 0 where b has dim 1
inline std::vector<int64_t> broadcast_strides(const Shape& a, const Shape& b) {
  auto st = row_major_strides(b);
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[i] == 1 && a[i] != 1) st[i] = 0;
  }
  return st;
}

inline int64_t map_broadcast_index(int64_t lin, const std::vector<int64_t>& a_strides,
                                   const std::vector<int64_t>& b_strides, const Shape& a_shape) {
  int64_t off = 0;
  for (size_t d = 0; d < a_shape.size(); ++d) {
    const int64_t idx = (lin / a_strides[d]) % a_shape[d];
    off += idx * b_strides[d];
  }
  return off;
}

}  // namespace detail

// a + b where b's shape matches a's rank with each dim either equal or 1.
// Backward reduces the upstream gradient over the broadcast dims of b.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank())
    throw ShapeError(msg("add_broadcast rank mismatch: ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
  for (int i = 0; i < a.rank(); ++i) {
    if (b.dim(i) != 1 && b.dim(i) != a.dim(i))
      throw ShapeError(msg("add_broadcast dim ", i, " incompatible: ", shape_str(a.shape()),
                           " vs ", shape_str(b.shape())));
  }
  const int64_t n = a.numel();
  const auto a_st = detail::row_major_strides(a.shape());
  const auto b_st = detail::broadcast_strides(a.shape(), b.shape());
  const Shape a_shape = a.shape();
  std::vector<T> out(static_cast<size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  kernels::for_each(n, [&](int64_t i) {
    out[i] = pa[i] + pb[detail::map_broadcast_index(i, a_st, b_st, a_shape)];
  });
  return detail::make_op<T>(
      "add_broadcast", a.shape(), std::move(out), {a, b},
      [n, a_st, b_st, a_shape](detail::Node<T>& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        const T* sg = self.grad.data();
        if (detail::wants_grad(ia)) {
          ia.ensure_grad();
          T* g = ia.grad.data();
          kernels::for_each(n, [&](int64_t i) { g[i] += sg[i]; });
        }
        if (detail::wants_grad(ib)) {
          ib.ensure_grad();
          T* g = ib.grad.data();
          // reduction into b: keep serial for a fixed accumulation order
          for (int64_t i = 0; i < n; ++i)
            g[detail::map_broadcast_index(i, a_st, b_st, a_shape)] += sg[i];
        }
      });
}

// x * m where m's shape is a prefix of x's shape (broadcast over trailing dims).
template <typename T>
Tensor<T> mul_prefix(const Tensor<T>& x, const Tensor<T>& m) {
  if (m.rank() > x.rank())
    throw ShapeError(msg("mul_prefix: mask rank exceeds tensor rank ", shape_str(x.shape()),
                         " vs ", shape_str(m.shape())));
  for (int i = 0; i < m.rank(); ++i) {
    if (x.dim(i) != m.dim(i))
      throw ShapeError(msg("mul_prefix prefix mismatch: ", shape_str(x.shape()), " vs ",
                           shape_str(m.shape())));
  }
  const int64_t n = x.numel();
  const int64_t inner = n / std::max<int64_t>(m.numel(), 1);
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
  const T* pm = m.data().data();
  kernels::for_each(n, [&](int64_t i) { out[i] = px[i] * pm[i / inner]; });
  return detail::make_op<T>(
      "mul_prefix", x.shape(), std::move(out), {x, m}, [n, inner](detail::Node<T>& self) {
        auto& ix = *self.inputs[0];
        auto& im = *self.inputs[1];
        const T* sg = self.grad.data();
        if (detail::wants_grad(ix)) {
          ix.ensure_grad();
          T* g = ix.grad.data();
          const T* pm = im.value.data();
          kernels::for_each(n, [&](int64_t i) { g[i] += sg[i] * pm[i / inner]; });
        }
        if (detail::wants_grad(im)) {
          im.ensure_grad();
          T* g = im.grad.data();
          const T* px = ix.value.data();
          for (int64_t i = 0; i < n; ++i) g[i / inner] += sg[i] * px[i];
        }
      });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

namespace detail {

struct AxisSplit {
  int64_t outer, axis, inner;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError(msg("axis ", axis, " invalid for rank ", r));
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) s.inner *= shape[static_cast<size_t>(i)];
  return s;
}

}  // namespace detail

// Numerically stable log-softmax along `axis` (max subtraction).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1) {
  const auto sp = detail::split_axis(x.shape(), axis);
  const int64_t rows = sp.outer * sp.inner;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  kernels::for_each(rows, [&](int64_t r) {
    const int64_t o = r / sp.inner, in = r % sp.inner;
    const int64_t base = o * sp.axis * sp.inner + in;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t a = 0; a < sp.axis; ++a) mx = std::max(mx, px[base + a * sp.inner]);
    T sum = T(0);
    for (int64_t a = 0; a < sp.axis; ++a) sum += std::exp(px[base + a * sp.inner] - mx);
    const T lse = mx + std::log(sum);
    for (int64_t a = 0; a < sp.axis; ++a) out[base + a * sp.inner] = px[base + a * sp.inner] - lse;
  });
  return detail::make_op<T>(
      "log_softmax", x.shape(), std::move(out), {x}, [sp](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!detail::wants_grad(in)) return;
        in.ensure_grad();
        T* g = in.grad.data();
        const T* sg = self.grad.data();
        const T* y = self.value.data();
        const int64_t rows = sp.outer * sp.inner;
        kernels::for_each(rows, [&](int64_t r) {
          const int64_t o = r / sp.inner, inn = r % sp.inner;
          const int64_t base = o * sp.axis * sp.inner + inn;
          T gsum = T(0);
          for (int64_t a = 0; a < sp.axis; ++a) gsum += sg[base + a * sp.inner];
          for (int64_t a = 0; a < sp.axis; ++a) {
            const int64_t i = base + a * sp.inner;
            g[i] += sg[i] - std::exp(y[i]) * gsum;
          }
        });
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  const auto sp = detail::split_axis(x.shape(), axis);
  const int64_t rows = sp.outer * sp.inner;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
  kernels::for_each(rows, [&](int64_t r) {
    const int64_t o = r / sp.inner, in = r % sp.inner;
    const int64_t base = o * sp.axis * sp.inner + in;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t a = 0; a < sp.axis; ++a) mx = std::max(mx, px[base + a * sp.inner]);
    T sum = T(0);
    for (int64_t a = 0; a < sp.axis; ++a) {
      const T e = std::exp(px[base + a * sp.inner] - mx);
      out[base + a * sp.inner] = e;
      sum += e;
    }
    for (int64_t a = 0; a < sp.axis; ++a) out[base + a * sp.inner] /= sum;
  });
  return detail::make_op<T>(
      "softmax", x.shape(), std::move(out), {x}, [sp](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!detail::wants_grad(in)) return;
        in.ensure_grad();
        T* g = in.grad.data();
        const T* sg = self.grad.data();
        const T* y = self.value.data();
        const int64_t rows = sp.outer * sp.inner;
        kernels::for_each(rows, [&](int64_t r) {
          const int64_t o = r / sp.inner, inn = r % sp.inner;
          const int64_t base = o * sp.axis * sp.inner + inn;
          T dot = T(0);
          for (int64_t a = 0; a < sp.axis; ++a) {
            const int64_t i = base + a * sp.inner;
            dot += sg[i] * y[i];
          }
          for (int64_t a = 0; a < sp.axis; ++a) {
            const int64_t i = base + a * sp.inner;
            g[i] += y[i] * (sg[i] - dot);
          }
        });
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  // fixed-order serial reduction keeps results independent of thread count
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  const int64_t n = x.numel();
  return detail::make_op<T>("sum_all", {1}, {acc}, {x}, [n](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!detail::wants_grad(in)) return;
    in.ensure_grad();
    const T sg = self.grad[0];
    T* g = in.grad.data();
    kernels::for_each(n, [&](int64_t i) { g[i] += sg; });
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError(
        msg("reshape ", shape_str(x.shape()), " -> ", shape_str(shape), " changes element count"));
  std::vector<T> out = x.data();
  const int64_t n = x.numel();
  return detail::make_op<T>("reshape", std::move(shape), std::move(out), {x},
                            [n](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              kernels::for_each(n, [&](int64_t i) { g[i] += sg[i]; });
                            });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<int> axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r)
    throw ShapeError(msg("permute needs ", r, " axes, got ", axes.size()));
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  const auto in_st = detail::row_major_strides(x.shape());
  const auto out_st = detail::row_major_strides(out_shape);
  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
  const Shape os = out_shape;
  kernels::for_each(n, [&](int64_t i) {
    int64_t src = 0;
    for (int d = 0; d < r; ++d) {
      const int64_t idx = (i / out_st[static_cast<size_t>(d)]) % os[static_cast<size_t>(d)];
      src += idx * in_st[static_cast<size_t>(axes[static_cast<size_t>(d)])];
    }
    out[i] = px[src];
  });
  return detail::make_op<T>(
      "permute", out_shape, std::move(out), {x},
      [n, r, axes, in_st, out_st, os](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!detail::wants_grad(in)) return;
        in.ensure_grad();
        T* g = in.grad.data();
        const T* sg = self.grad.data();
        kernels::for_each(n, [&](int64_t i) {
          int64_t src = 0;
          for (int d = 0; d < r; ++d) {
            const int64_t idx = (i / out_st[static_cast<size_t>(d)]) % os[static_cast<size_t>(d)];
            src += idx * in_st[static_cast<size_t>(axes[static_cast<size_t>(d)])];
          }
          g[src] += sg[i];  // each src hit exactly once: permute is a bijection
        });
      });
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank()) throw ShapeError("concat_last rank mismatch");
  for (int i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i))
      throw ShapeError(msg("concat_last leading dims differ: ", shape_str(a.shape()), " vs ",
                           shape_str(b.shape())));
  }
  const int64_t da = a.dim(a.rank() - 1), db = b.dim(b.rank() - 1);
  const int64_t rows = a.numel() / da;
  Shape out_shape = a.shape();
  out_shape.back() = da + db;
  std::vector<T> out(static_cast<size_t>(rows * (da + db)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  kernels::for_each(rows, [&](int64_t r) {
    T* dst = out.data() + r * (da + db);
    std::copy(pa + r * da, pa + (r + 1) * da, dst);
    std::copy(pb + r * db, pb + (r + 1) * db, dst + da);
  });
  return detail::make_op<T>(
      "concat_last", std::move(out_shape), std::move(out), {a, b},
      [rows, da, db](detail::Node<T>& self) {
        auto& ia = *self.inputs[0];
        auto& ib = *self.inputs[1];
        const T* sg = self.grad.data();
        if (detail::wants_grad(ia)) {
          ia.ensure_grad();
          T* g = ia.grad.data();
          kernels::for_each(rows, [&](int64_t r) {
            for (int64_t j = 0; j < da; ++j) g[r * da + j] += sg[r * (da + db) + j];
          });
        }
        if (detail::wants_grad(ib)) {
          ib.ensure_grad();
          T* g = ib.grad.data();
          kernels::for_each(rows, [&](int64_t r) {
            for (int64_t j = 0; j < db; ++j) g[r * db + j] += sg[r * (da + db) + da + j];
          });
        }
      });
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, int64_t start, int64_t len) {
  const int64_t d = x.dim(x.rank() - 1);
  if (start < 0 || len < 0 || start + len > d)
    throw ShapeError(msg("slice_last [", start, ",", start + len, ") out of range for dim ", d));
  const int64_t rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<T> out(static_cast<size_t>(rows * len));
  const T* px = x.data().data();
  kernels::for_each(rows, [&](int64_t r) {
    std::copy(px + r * d + start, px + r * d + start + len, out.data() + r * len);
  });
  return detail::make_op<T>("slice_last", std::move(out_shape), std::move(out), {x},
                            [rows, d, start, len](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              kernels::for_each(rows, [&](int64_t r) {
                                for (int64_t j = 0; j < len; ++j)
                                  g[r * d + start + j] += sg[r * len + j];
                              });
                            });
}

// x[:, t, ...] for x of shape [B, S, rest...]
template <typename T>
Tensor<T> select_step(const Tensor<T>& x, int64_t t) {
  if (x.rank() < 2) throw ShapeError("select_step needs rank >= 2");
  const int64_t B = x.dim(0), S = x.dim(1);
  if (t < 0 || t >= S) throw ShapeError(msg("select_step index ", t, " out of range [0,", S, ")"));
  const int64_t inner = x.numel() / (B * S);
  Shape out_shape;
  out_shape.push_back(B);
  for (int i = 2; i < x.rank(); ++i) out_shape.push_back(x.dim(i));
  if (out_shape.size() == 1) out_shape.push_back(1);  // keep rank 2 minimum for [B,1] views
  std::vector<T> out(static_cast<size_t>(B * inner));
  const T* px = x.data().data();
  kernels::for_each(B, [&](int64_t b) {
    std::copy(px + (b * S + t) * inner, px + (b * S + t + 1) * inner, out.data() + b * inner);
  });
  return detail::make_op<T>("select_step", std::move(out_shape), std::move(out), {x},
                            [B, S, t, inner](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              kernels::for_each(B, [&](int64_t b) {
                                for (int64_t j = 0; j < inner; ++j)
                                  g[(b * S + t) * inner + j] += sg[b * inner + j];
                              });
                            });
}

// steps: S tensors of identical shape [B, rest...] -> [B, S, rest...]
template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw ContractError("stack_steps on empty sequence");
  const Shape& s0 = steps[0].shape();
  for (const auto& s : steps) {
    if (s.shape() != s0) throw ShapeError("stack_steps expects identical step shapes");
  }
  const int64_t S = static_cast<int64_t>(steps.size());
  const int64_t B = s0[0];
  const int64_t inner = steps[0].numel() / B;
  Shape out_shape;
  out_shape.push_back(B);
  out_shape.push_back(S);
  for (size_t i = 1; i < s0.size(); ++i) out_shape.push_back(s0[i]);
  std::vector<T> out(static_cast<size_t>(B * S * inner));
  for (int64_t t = 0; t < S; ++t) {
    const T* ps = steps[static_cast<size_t>(t)].data().data();
    kernels::for_each(B, [&](int64_t b) {
      std::copy(ps + b * inner, ps + (b + 1) * inner, out.data() + (b * S + t) * inner);
    });
  }
  return detail::make_op<T>("stack_steps", std::move(out_shape), std::move(out), steps,
                            [B, S, inner](detail::Node<T>& self) {
                              const T* sg = self.grad.data();
                              for (int64_t t = 0; t < S; ++t) {
                                auto& in = *self.inputs[static_cast<size_t>(t)];
                                if (!detail::wants_grad(in)) continue;
                                in.ensure_grad();
                                T* g = in.grad.data();
                                kernels::for_each(B, [&](int64_t b) {
                                  for (int64_t j = 0; j < inner; ++j)
                                    g[b * inner + j] += sg[(b * S + t) * inner + j];
                                });
                              }
                            });
}

// ---------------------------------------------------------------------------
// indexing
// ---------------------------------------------------------------------------

// Row gather: table [V,d], ids of any shape -> [ids_shape..., d].
// Backward scatter-adds into exactly the looked-up rows.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int32_t>& ids, Shape ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be [V,d]");
  if (numel_of(ids_shape) != static_cast<int64_t>(ids.size()))
    throw ShapeError("embedding ids_shape does not match id count");
  const int64_t V = table.dim(0), d = table.dim(1);
  for (const int32_t id : ids) {
    if (id < 0 || id >= V)
      throw IndexError(msg("embedding id ", id, " out of range for vocabulary of size ", V));
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(d);
  std::vector<T> out(static_cast<size_t>(n * d));
  const T* pt = table.data().data();
  kernels::for_each(n, [&](int64_t i) {
    std::copy(pt + ids[static_cast<size_t>(i)] * d, pt + (ids[static_cast<size_t>(i)] + 1) * d,
              out.data() + i * d);
  });
  return detail::make_op<T>("embedding", std::move(out_shape), std::move(out), {table},
                            [ids, n, d](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T* sg = self.grad.data();
                              for (int64_t i = 0; i < n; ++i) {
                                T* row = g + ids[static_cast<size_t>(i)] * d;
                                const T* srow = sg + i * d;
                                for (int64_t j = 0; j < d; ++j) row[j] += srow[j];
                              }
                            });
}

// Mean of logp[i, ids[i]] over positions where mask[i] != 0.
// The building block of pad-aware cross-entropy.
template <typename T>
Tensor<T> pick_mean(const Tensor<T>& logp, const std::vector<int32_t>& ids,
                    const std::vector<uint8_t>& mask) {
  if (logp.rank() != 2) throw ShapeError("pick_mean expects [N,V]");
  const int64_t N = logp.dim(0), V = logp.dim(1);
  if (static_cast<int64_t>(ids.size()) != N || static_cast<int64_t>(mask.size()) != N)
    throw ShapeError("pick_mean ids/mask length mismatch");
  int64_t count = 0;
  for (const uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("pick_mean: zero real tokens in batch");
  for (int64_t i = 0; i < N; ++i) {
    if (mask[static_cast<size_t>(i)] && (ids[static_cast<size_t>(i)] < 0 || ids[static_cast<size_t>(i)] >= V))
      throw IndexError(msg("pick_mean id ", ids[static_cast<size_t>(i)], " out of range for V=", V));
  }
  T acc = T(0);
  const T* p = logp.data().data();
  for (int64_t i = 0; i < N; ++i) {
    if (mask[static_cast<size_t>(i)]) acc += p[i * V + ids[static_cast<size_t>(i)]];
  }
  acc /= static_cast<T>(count);
  return detail::make_op<T>("pick_mean", {1}, {acc}, {logp},
                            [ids, mask, N, V, count](detail::Node<T>& self) {
                              auto& in = *self.inputs[0];
                              if (!detail::wants_grad(in)) return;
                              in.ensure_grad();
                              T* g = in.grad.data();
                              const T sg = self.grad[0] / static_cast<T>(count);
                              for (int64_t i = 0; i < N; ++i) {
                                if (mask[static_cast<size_t>(i)])
                                  g[i * V + ids[static_cast<size_t>(i)]] += sg;
                              }
                            });
}

// Per-vector layer norm over the last dim, then affine. Fused op: the
// backward uses saved normalized values and reciprocal stddevs.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError(msg("layer_norm affine params must have ", d, " elements"));
  const int64_t rows = x.numel() / d;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  kernels::for_each(rows, [&](int64_t r) {
    const T* row = px + r * d;
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int64_t j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * rs;
      (*xhat)[static_cast<size_t>(r * d + j)] = xh;
      out[static_cast<size_t>(r * d + j)] = xh * pg[j] + pb[j];
    }
  });
  return detail::make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat, rstd](detail::Node<T>& self) {
        auto& ix = *self.inputs[0];
        auto& ig = *self.inputs[1];
        auto& ib = *self.inputs[2];
        const T* sg = self.grad.data();
        const T* pg = ig.value.data();
        if (detail::wants_grad(ix)) {
          ix.ensure_grad();
          T* g = ix.grad.data();
          kernels::for_each(rows, [&](int64_t r) {
            const T* xh = xhat->data() + r * d;
            const T* grow = sg + r * d;
            T mean_dy = T(0), mean_dyxh = T(0);
            for (int64_t j = 0; j < d; ++j) {
              const T dy = grow[j] * pg[j];
              mean_dy += dy;
              mean_dyxh += dy * xh[j];
            }
            mean_dy /= static_cast<T>(d);
            mean_dyxh /= static_cast<T>(d);
            const T rs = (*rstd)[static_cast<size_t>(r)];
            for (int64_t j = 0; j < d; ++j) {
              const T dy = grow[j] * pg[j];
              g[r * d + j] += rs * (dy - mean_dy - xh[j] * mean_dyxh);
            }
          });
        }
        if (detail::wants_grad(ig)) {
          ig.ensure_grad();
          T* g = ig.grad.data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j)
              g[j] += sg[r * d + j] * (*xhat)[static_cast<size_t>(r * d + j)];
        }
        if (detail::wants_grad(ib)) {
          ib.ensure_grad();
          T* g = ib.grad.data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) g[j] += sg[r * d + j];
        }
      });
}

}  // namespace r1t
