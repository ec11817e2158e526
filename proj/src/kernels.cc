#include "dbgl/kernels.h"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dbgl::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

inline void gemm_row(const double* a, const double* b, double* c,
                     std::size_t k, std::size_t n) {
  std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c,
                        std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p] * brow[p];
    c[j] = acc;
  }
}

// Row i of a^T b: sum over p of a[p, i] * b[p, :].
inline void gemm_tn_row(const double* a, const double* b, double* c,
                        std::size_t i, std::size_t m, std::size_t k,
                        std::size_t n) {
  std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

inline double row_norm(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += x[j] * x[j];
  return std::sqrt(s);
}

}  // namespace

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    gemm_tn_row(a.data(), b.data(), c.data() + i * n, i, m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    softmax_row(x.data() + i * n, y.data() + i * n, n);
}

void row_norms(std::span<const double> x, std::span<double> out,
               std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) out[i] = row_norm(x.data() + i * n, n);
}

}  // namespace serial

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (long long i = 0; i < rows; ++i)
    gemm_row(ap + i * k, bp, cp + i * n, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (long long i = 0; i < rows; ++i)
    gemm_nt_row(ap + i * k, bp, cp + i * n, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (long long i = 0; i < rows; ++i)
    gemm_tn_row(ap, bp, cp + i * n, static_cast<std::size_t>(i), m, k, n);
}

void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t m, std::size_t n) {
  const double* xp = x.data();
  double* yp = y.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n > kParallelThreshold)
  for (long long i = 0; i < rows; ++i) softmax_row(xp + i * n, yp + i * n, n);
}

void row_norms(std::span<const double> x, std::span<double> out,
               std::size_t m, std::size_t n) {
  const double* xp = x.data();
  double* op = out.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * n > kParallelThreshold)
  for (long long i = 0; i < rows; ++i) op[i] = row_norm(xp + i * n, n);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dbgl::kernels
