#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "r1t/errors.hpp"
#include "r1t/rng.hpp"
#include "r1t/tensor.hpp"

namespace r1t {

// Ordered registry of named trainable tensors. Registration order is the
// canonical order for initialization, checkpoint layout, and optimizer state,
// so it must be deterministic for a given model configuration.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> create(const std::string& name, Shape shape, std::vector<T> data) {
    if (by_name_.count(name)) throw ContractError(msg("duplicate parameter name '", name, "'"));
    Tensor<T> t = Tensor<T>::param(std::move(shape), std::move(data));
    order_.push_back(name);
    by_name_.emplace(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError(msg("unknown parameter '", name, "'"));
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ContractError(msg("unknown parameter '", name, "'"));
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& name : order_) n += by_name_.at(name).numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) by_name_.at(name).zero_grad();
  }

  std::vector<std::pair<std::string, Tensor<T>>> items() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(order_.size());
    for (const auto& name : order_) out.emplace_back(name, by_name_.at(name));
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> by_name_;
};

namespace init {

template <typename T>
std::vector<T> uniform(Rng& rng, int64_t n, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

// Normal with std 1/sqrt(fan_in); keeps activations at unit scale through
// linear maps without any architecture-specific tuning.
template <typename T>
std::vector<T> scaled_normal(Rng& rng, int64_t n, int64_t fan_in) {
  const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<T>(rng.gaussian(0.0, std));
  return v;
}

template <typename T>
std::vector<T> constant(int64_t n, T value) {
  return std::vector<T>(static_cast<size_t>(n), value);
}

}  // namespace init

}  // namespace r1t
