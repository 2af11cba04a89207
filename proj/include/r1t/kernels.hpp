#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace r1t::kernels {

// Two interchangeable backends: `serial` is the reference implementation,
// `omp` parallelizes over independent output rows/elements. Both share the
// same per-element inner loops, so for any thread count the omp results are
// bit-identical to serial (each output element is accumulated by exactly one
// thread in a fixed order). tests/test_kernels.cpp asserts this; the
// bench_kernels tool compares their throughput.
enum class Backend { serial, omp };

inline Backend& backend() {
#ifdef _OPENMP
  static Backend b = Backend::omp;
#else
  static Backend b = Backend::serial;
#endif
  return b;
}

inline void set_backend(Backend b) { backend() = b; }

namespace detail {

// c[i,:] += a[i,k] * b[k,:] accumulated over k in ascending order.
template <typename T>
inline void matmul_nn_row(const T* a, const T* b, T* c, int64_t i, int64_t k_dim, int64_t n) {
  T* crow = c + i * n;
  for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
  const T* arow = a + i * k_dim;
  for (int64_t k = 0; k < k_dim; ++k) {
    const T aik = arow[k];
    const T* brow = b + k * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
  }
}

// c[i,j] = dot(a[i,:], b[j,:])  (b stored [n,k])
template <typename T>
inline void matmul_nt_row(const T* a, const T* b, T* c, int64_t i, int64_t k_dim, int64_t n) {
  const T* arow = a + i * k_dim;
  T* crow = c + i * n;
  for (int64_t j = 0; j < n; ++j) {
    const T* brow = b + j * k_dim;
    T acc = T(0);
    for (int64_t k = 0; k < k_dim; ++k) acc += arow[k] * brow[k];
    crow[j] = acc;
  }
}

// c[i,:] = sum_k a[k,i] * b[k,:]  (a stored [k,m], output [m,n])
template <typename T>
inline void matmul_tn_row(const T* a, const T* b, T* c, int64_t i, int64_t m, int64_t k_dim,
                          int64_t n) {
  T* crow = c + i * n;
  for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
  for (int64_t k = 0; k < k_dim; ++k) {
    const T aki = a[k * m + i];
    const T* brow = b + k * n;
    for (int64_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
  }
}

}  // namespace detail

namespace serial {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) detail::matmul_nn_row(a, b, c, i, k, n);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n);
}

// f(i) for i in [0, n); each index touched exactly once.
template <typename F>
void for_each(int64_t n, F&& f) {
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace serial

namespace omp {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) detail::matmul_nn_row(a, b, c, i, k, n);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n);
}

template <typename F>
void for_each(int64_t n, F&& f) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace omp

// Dispatching entry points used by the tensor layer.

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  if (backend() == Backend::omp)
    omp::matmul_nn(a, b, c, m, k, n);
  else
    serial::matmul_nn(a, b, c, m, k, n);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  if (backend() == Backend::omp)
    omp::matmul_nt(a, b, c, m, k, n);
  else
    serial::matmul_nt(a, b, c, m, k, n);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  if (backend() == Backend::omp)
    omp::matmul_tn(a, b, c, m, k, n);
  else
    serial::matmul_tn(a, b, c, m, k, n);
}

template <typename F>
void for_each(int64_t n, F&& f) {
  if (backend() == Backend::omp)
    omp::for_each(n, std::forward<F>(f));
  else
    serial::for_each(n, std::forward<F>(f));
}

// Batched matmul over `batch` independent [m,k]x[k,n] products laid out
// contiguously. Parallelism is over (batch, row) pairs.
template <typename T>
void bmm_nn(const T* a, const T* b, T* c, int64_t batch, int64_t m, int64_t k, int64_t n) {
  for_each(batch * m, [=](int64_t idx) {
    const int64_t bi = idx / m, i = idx % m;
    detail::matmul_nn_row(a + bi * m * k, b + bi * k * n, c + bi * m * n, i, k, n);
  });
}

template <typename T>
void bmm_nt(const T* a, const T* b, T* c, int64_t batch, int64_t m, int64_t k, int64_t n) {
  for_each(batch * m, [=](int64_t idx) {
    const int64_t bi = idx / m, i = idx % m;
    detail::matmul_nt_row(a + bi * m * k, b + bi * n * k, c + bi * m * n, i, k, n);
  });
}

template <typename T>
void bmm_tn(const T* a, const T* b, T* c, int64_t batch, int64_t m, int64_t k, int64_t n) {
  for_each(batch * m, [=](int64_t idx) {
    const int64_t bi = idx / m, i = idx % m;
    detail::matmul_tn_row(a + bi * k * m, b + bi * k * n, c + bi * m * n, i, m, k, n);
  });
}

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace r1t::kernels
