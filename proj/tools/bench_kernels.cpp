// Times the serial reference kernels against the OpenMP ones on matmul and
// elementwise workloads of a few sizes. Run with no arguments.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "r1t/kernels.hpp"
#include "r1t/rng.hpp"
#include "r1t/runtime.hpp"

namespace kn = r1t::kernels;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  std::printf("compute: %s\n\n", r1t::runtime_summary().c_str());
  std::printf("%-28s %12s %12s %8s\n", "workload", "serial(ms)", "omp(ms)", "speedup");

  r1t::Rng rng(1234);
  for (int64_t dim : {64, 128, 256}) {
    std::vector<float> a(static_cast<size_t>(dim * dim));
    std::vector<float> b(static_cast<size_t>(dim * dim));
    std::vector<float> c(static_cast<size_t>(dim * dim));
    for (auto& x : a) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& x : b) x = static_cast<float>(rng.uniform(-1.0, 1.0));

    const int reps = dim <= 128 ? 50 : 10;
    kn::set_backend(kn::Backend::serial);
    const double ts = time_ms(reps, [&] { kn::matmul_nn(a.data(), b.data(), c.data(), dim, dim, dim); });
    kn::set_backend(kn::Backend::omp);
    const double to = time_ms(reps, [&] { kn::matmul_nn(a.data(), b.data(), c.data(), dim, dim, dim); });

    char label[64];
    std::snprintf(label, sizeof label, "matmul %lldx%lldx%lld", static_cast<long long>(dim),
                  static_cast<long long>(dim), static_cast<long long>(dim));
    std::printf("%-28s %12.3f %12.3f %7.2fx\n", label, ts, to, ts / to);
  }

  {
    const int64_t n = 1 << 22;
    std::vector<float> x(static_cast<size_t>(n), 1.5f);
    std::vector<float> y(static_cast<size_t>(n));
    kn::set_backend(kn::Backend::serial);
    const double ts = time_ms(20, [&] {
      kn::for_each(n, [&](int64_t i) { y[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] * 2.0f + 0.5f; });
    });
    kn::set_backend(kn::Backend::omp);
    const double to = time_ms(20, [&] {
      kn::for_each(n, [&](int64_t i) { y[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] * 2.0f + 0.5f; });
    });
    std::printf("%-28s %12.3f %12.3f %7.2fx\n", "elementwise 4M", ts, to, ts / to);
  }

  kn::set_backend(kn::Backend::omp);
  return 0;
}
