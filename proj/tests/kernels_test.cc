#include "dbgl/kernels.h"

#include <gtest/gtest.h>

#include <vector>

#include "dbgl/rng.h"

namespace dbgl::kernels {
namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// Textbook triple loop, the reference for both kernel variants.
std::vector<double> naive_gemm(const std::vector<double>& a,
                               const std::vector<double>& b, std::size_t m,
                               std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

std::vector<double> transpose(const std::vector<double>& x, std::size_t r,
                              std::size_t c) {
  std::vector<double> t(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = x[i * c + j];
  return t;
}

TEST(Kernels, GemmMatchesNaive) {
  Rng rng(1);
  for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                         {3, 5, 2}, {17, 9, 33}, {64, 64, 64}}) {
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    const auto ref = naive_gemm(a, b, m, k, n);
    std::vector<double> c(m * n);
    gemm(a, b, c, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);

    std::vector<double> cnt(m * n);
    gemm_nt(a, transpose(b, k, n), cnt, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(cnt[i], ref[i], 1e-12);

    std::vector<double> ctn(m * n);
    gemm_tn(transpose(a, m, k), b, ctn, m, k, n);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(ctn[i], ref[i], 1e-12);
  }
}

// The OpenMP kernels must reproduce the serial reference bit-for-bit; the
// sizes straddle the parallel threshold.
TEST(Kernels, ParallelIsBitwiseSerial) {
  Rng rng(2);
  for (std::size_t size : {4u, 40u, 130u}) {
    const std::size_t m = size, k = size / 2 + 1, n = size + 3;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    std::vector<double> s(m * n), p(m * n);
    serial::gemm(a, b, s, m, k, n);
    gemm(a, b, p, m, k, n);
    EXPECT_EQ(s, p);

    const auto bt = transpose(b, k, n);
    serial::gemm_nt(a, bt, s, m, k, n);
    gemm_nt(a, bt, p, m, k, n);
    EXPECT_EQ(s, p);

    const auto at = transpose(a, m, k);
    serial::gemm_tn(at, b, s, m, k, n);
    gemm_tn(at, b, p, m, k, n);
    EXPECT_EQ(s, p);

    serial::softmax_rows(s, s, m, n);
    softmax_rows(p, p, m, n);
    EXPECT_EQ(s, p);

    std::vector<double> ns(m), np(m);
    serial::row_norms(a, ns, m, k);
    row_norms(a, np, m, k);
    EXPECT_EQ(ns, np);
  }
}

TEST(Kernels, SoftmaxRowsSumToOne) {
  std::vector<double> x = {0, 0, 50, -50, 1, 2};
  std::vector<double> y(6);
  softmax_rows(x, y, 3, 2);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(y[2 * r] + y[2 * r + 1], 1.0, 1e-15);
  EXPECT_GT(y[3], 0.0);
}

}  // namespace
}  // namespace dbgl::kernels
