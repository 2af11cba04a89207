#pragma once

// Gradient-check scenarios covering every differentiable op in the tensor
// engine. Shared between the unit tests and the acceptance runner so both
// exercise the identical op inventory at 32-bit and 64-bit precision.

#include <string>
#include <utility>
#include <vector>

#include "r1t/grad_check.hpp"
#include "r1t/rng.hpp"
#include "r1t/tensor.hpp"

namespace r1t_tests {

using r1t::GradCheckResult;
using r1t::Rng;
using r1t::Shape;
using r1t::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<T> v(static_cast<size_t>(r1t::numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Weighted scalar readout: distinct per-element weights so transposition or
// indexing mistakes in a backward rule cannot cancel out in a plain sum.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& y, uint64_t seed) {
  Rng rng(seed);
  std::vector<T> w(y.data().size());
  for (auto& x : w) x = static_cast<T>(rng.uniform(0.5, 1.5));
  return r1t::sum_all(r1t::mul(y, Tensor<T>::from(y.shape(), std::move(w))));
}

template <typename T>
struct OpCheck {
  std::string name;
  GradCheckResult<T> result;
};

template <typename T>
std::vector<OpCheck<T>> run_op_grad_checks(T fd_eps) {
  using r1t::grad_check;
  std::vector<OpCheck<T>> out;
  auto run = [&](const std::string& name, std::vector<std::pair<std::string, Tensor<T>>> params,
                 std::function<Tensor<T>()> loss) {
    out.push_back({name, grad_check<T>(std::move(params), loss, fd_eps)});
  };

  {
    auto a = random_tensor<T>({3, 4}, 1);
    auto b = random_tensor<T>({4, 2}, 2);
    run("matmul", {{"a", a}, {"b", b}}, [=] { return weighted_sum(r1t::matmul(a, b), 100); });
  }
  {
    auto x = random_tensor<T>({3, 4}, 3);
    auto w = random_tensor<T>({5, 4}, 4);
    run("matmul_t", {{"x", x}, {"w", w}}, [=] { return weighted_sum(r1t::matmul_t(x, w), 101); });
  }
  {
    auto a = random_tensor<T>({2, 3, 4}, 5);
    auto b = random_tensor<T>({2, 4, 2}, 6);
    run("bmm", {{"a", a}, {"b", b}}, [=] { return weighted_sum(r1t::bmm(a, b), 102); });
  }
  {
    auto a = random_tensor<T>({2, 3}, 7);
    auto b = random_tensor<T>({2, 3}, 8);
    run("add", {{"a", a}, {"b", b}}, [=] { return weighted_sum(r1t::add(a, b), 103); });
    run("sub", {{"a", a}, {"b", b}}, [=] { return weighted_sum(r1t::sub(a, b), 104); });
    run("mul", {{"a", a}, {"b", b}}, [=] { return weighted_sum(r1t::mul(a, b), 105); });
    run("add_scalar", {{"a", a}}, [=] { return weighted_sum(r1t::add_scalar(a, T(0.7)), 106); });
    run("mul_scalar", {{"a", a}}, [=] { return weighted_sum(r1t::mul_scalar(a, T(-1.3)), 107); });
  }
  {
    auto a = random_tensor<T>({2, 3, 4}, 9);
    auto b = random_tensor<T>({1, 3, 1}, 10);
    run("add_broadcast", {{"a", a}, {"b", b}},
        [=] { return weighted_sum(r1t::add_broadcast(a, b), 108); });
  }
  {
    auto x = random_tensor<T>({2, 3, 4}, 11);
    auto m = random_tensor<T>({2, 3}, 12, 0.2, 1.0);
    run("mul_prefix", {{"x", x}, {"m", m}},
        [=] { return weighted_sum(r1t::mul_prefix(x, m), 109); });
  }
  {
    // keep values away from the kink at 0 so finite differences stay clean
    auto x = Tensor<T>::from({2, 3}, {T(0.5), T(-0.7), T(1.2), T(-0.3), T(0.9), T(-1.5)});
    run("relu", {{"x", x}}, [=] { return weighted_sum(r1t::relu(x), 110); });
  }
  {
    auto x = random_tensor<T>({2, 4}, 13);
    run("tanh", {{"x", x}}, [=] { return weighted_sum(r1t::tanh_op(x), 111); });
    run("sigmoid", {{"x", x}}, [=] { return weighted_sum(r1t::sigmoid(x), 112); });
  }
  {
    auto x = random_tensor<T>({2, 5}, 14);
    run("log_softmax.last", {{"x", x}},
        [=] { return weighted_sum(r1t::log_softmax(x, -1), 113); });
    run("softmax.last", {{"x", x}}, [=] { return weighted_sum(r1t::softmax(x, -1), 114); });
  }
  {
    auto x = random_tensor<T>({3, 2}, 15);
    run("log_softmax.axis0", {{"x", x}},
        [=] { return weighted_sum(r1t::log_softmax(x, 0), 115); });
  }
  {
    auto x = random_tensor<T>({2, 3}, 16);
    run("sum_all", {{"x", x}}, [=] { return r1t::sum_all(x); });
    run("mean_all", {{"x", x}}, [=] { return r1t::mean_all(x); });
  }
  {
    auto x = random_tensor<T>({2, 6}, 17);
    run("reshape", {{"x", x}}, [=] { return weighted_sum(r1t::reshape(x, {3, 4}), 116); });
  }
  {
    auto x = random_tensor<T>({2, 3, 4}, 18);
    run("permute", {{"x", x}},
        [=] { return weighted_sum(r1t::permute(x, {2, 0, 1}), 117); });
  }
  {
    auto a = random_tensor<T>({2, 3}, 19);
    auto b = random_tensor<T>({2, 2}, 20);
    run("concat_last", {{"a", a}, {"b", b}},
        [=] { return weighted_sum(r1t::concat_last(a, b), 118); });
  }
  {
    auto x = random_tensor<T>({2, 7}, 21);
    run("slice_last", {{"x", x}},
        [=] { return weighted_sum(r1t::slice_last(x, 2, 3), 119); });
  }
  {
    auto x = random_tensor<T>({2, 4, 3}, 22);
    run("select_step", {{"x", x}},
        [=] { return weighted_sum(r1t::select_step(x, 1), 120); });
  }
  {
    auto s0 = random_tensor<T>({2, 3}, 23);
    auto s1 = random_tensor<T>({2, 3}, 24);
    auto s2 = random_tensor<T>({2, 3}, 25);
    run("stack_steps", {{"s0", s0}, {"s1", s1}, {"s2", s2}}, [=] {
      return weighted_sum(r1t::stack_steps<T>({s0, s1, s2}), 121);
    });
  }
  {
    auto table = random_tensor<T>({5, 3}, 26);
    const std::vector<int32_t> ids{0, 2, 2, 4};  // repeated row checks scatter-add
    run("embedding", {{"table", table}},
        [=] { return weighted_sum(r1t::embedding(table, ids, {2, 2}), 122); });
  }
  {
    auto x = random_tensor<T>({4, 5}, 27);
    const std::vector<int32_t> ids{1, 3, 0, 2};
    const std::vector<uint8_t> mask{1, 1, 0, 1};
    run("pick_mean", {{"x", x}}, [=] { return r1t::pick_mean(x, ids, mask); });
  }
  {
    auto x = random_tensor<T>({3, 4}, 28);
    auto gamma = random_tensor<T>({4}, 29, 0.5, 1.5);
    auto beta = random_tensor<T>({4}, 30, -0.5, 0.5);
    run("layer_norm", {{"x", x}, {"gamma", gamma}, {"beta", beta}},
        [=] { return weighted_sum(r1t::layer_norm(x, gamma, beta), 123); });
  }
  {
    // cross-op chain: projection, bias, smooth activation, norm, log-softmax,
    // masked pick (relu is checked on its own with kink-safe inputs)
    auto x = random_tensor<T>({4, 6}, 31);
    auto w = random_tensor<T>({5, 6}, 32);
    auto b = random_tensor<T>({1, 5}, 33);
    auto g = random_tensor<T>({5}, 34, 0.5, 1.5);
    auto be = random_tensor<T>({5}, 35, -0.2, 0.2);
    const std::vector<int32_t> ids{4, 0, 1, 3};
    const std::vector<uint8_t> mask{1, 0, 1, 1};
    run("composite_chain", {{"x", x}, {"w", w}, {"b", b}, {"g", g}, {"beta", be}}, [=] {
      auto h = r1t::tanh_op(r1t::add_broadcast(r1t::matmul_t(x, w), b));
      auto n = r1t::layer_norm(h, g, be);
      return r1t::mul_scalar(r1t::pick_mean(r1t::log_softmax(n, -1), ids, mask), T(-1));
    });
  }

  return out;
}

}  // namespace r1t_tests
