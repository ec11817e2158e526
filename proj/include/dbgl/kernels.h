#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels behind the tensor ops.
//
// Each kernel has a serial reference in `serial::` and an OpenMP version at
// namespace scope. The parallel versions split work over output rows only,
// so every output element is reduced in the same order as the serial code and
// the two agree bit-for-bit. Tests rely on that.
namespace dbgl::kernels {

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a[m x k] * b[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// c[m x n] = a[k x m]^T * b[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// Row-wise max-shifted softmax of x[m x n] into y.
void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t m, std::size_t n);

// out[i] = sqrt(sum_j x[i, j]^2)
void row_norms(std::span<const double> x, std::span<double> out,
               std::size_t m, std::size_t n);

}  // namespace serial

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> x, std::span<double> y,
                  std::size_t m, std::size_t n);
void row_norms(std::span<const double> x, std::span<double> out,
               std::size_t m, std::size_t n);

// Threads OpenMP would use for a parallel region (1 when built without it).
int max_threads();

}  // namespace dbgl::kernels
