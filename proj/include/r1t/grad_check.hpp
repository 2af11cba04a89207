#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "r1t/tensor.hpp"

namespace r1t {

// Central-difference gradient verification. `make_loss` must rebuild the
// graph from the current contents of `params` and return a scalar loss;
// it is re-invoked after each coordinate nudge.
template <typename T>
struct GradCheckResult {
  T max_rel_err = T(0);
  std::string worst;  // "param_name[i]" of the worst coordinate
  bool ok(T tol) const { return max_rel_err < tol; }
};

template <typename T>
GradCheckResult<T> grad_check(std::vector<std::pair<std::string, Tensor<T>>> params,
                              const std::function<Tensor<T>()>& make_loss,
                              T eps = T(1e-4), T refine_above = T(0)) {
  for (auto& [name, p] : params) p.set_requires_grad(true);
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<T> loss = make_loss();
  loss.backward();

  // Coordinates where both gradients vanish agree in the only sense that
  // matters; dividing difference noise by a near-zero magnitude would
  // manufacture spurious relative errors (e.g. shift-invariant softmax
  // directions have exactly zero gradient).
  const T zero_tol = sizeof(T) == 4 ? T(1e-3) : T(1e-6);

  GradCheckResult<T> res;
  for (auto& [name, p] : params) {
    const std::vector<T> analytic = p.has_grad() ? p.grad() : std::vector<T>(p.data().size(), T(0));
    auto& data = p.raw_data();
    for (size_t i = 0; i < data.size(); ++i) {
      auto probe = [&](T step) -> T {  // rel err of the FD estimate at this step
        const T saved = data[i];
        data[i] = saved + step;
        const T up = make_loss().item();
        data[i] = saved - step;
        const T down = make_loss().item();
        data[i] = saved;
        const T numeric = (up - down) / (T(2) * step);
        if (std::abs(analytic[i]) < zero_tol && std::abs(numeric) < zero_tol) return T(0);
        return std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric));
      };
      T rel = probe(eps);
      if (refine_above > T(0) && rel > refine_above) {
        // The single-step estimate is unreliable near ReLU kinks (too-large
        // steps cross them) and in 32-bit roundoff (too-small steps amplify
        // it). Disagreement from a wrong analytic gradient persists at every
        // step size, so taking the best of a few scales only filters oracle
        // noise; the planted-fault test pins this down.
        for (T step : {eps * T(4), eps * T(2), eps / T(4), eps / T(16)}) {
          rel = std::min(rel, probe(step));
          if (rel <= refine_above) break;
        }
      }
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace r1t
