#include "dbgl/codebook.h"

#include <gtest/gtest.h>

#include <cmath>

#include "dbgl/errors.h"

namespace dbgl::codebook {
namespace {

namespace d = diff;

TEST(SoftFuse, SingleEntry) {
  const d::Tensor g = d::Tensor::from_data({1, 2}, {3.0, 4.0});
  const d::Tensor c = d::Tensor::from_data({1, 2}, {1.0, 2.0});
  const FusionResult r = soft_fuse(g, c);
  EXPECT_EQ(r.weights.item(), 1.0);
  const double alpha = std::sqrt(5.0) / (5.0 + kNormGuard);
  EXPECT_NEAR(r.fused.at(0, 0), 3.0 + alpha * 1.0, 1e-12);
  EXPECT_NEAR(r.fused.at(0, 1), 4.0 + alpha * 2.0, 1e-12);
}

TEST(SoftFuse, IdenticalEntriesQuantizeToThatEntry) {
  Rng rng(1);
  const d::Tensor c = d::Tensor::from_data({3, 2}, {0.5, -1.0, 0.5, -1.0, 0.5, -1.0});
  for (int i = 0; i < 10; ++i) {
    const d::Tensor g = nn::normal_tensor({1, 2}, 2.0, rng);
    const FusionResult r = soft_fuse(g, c);
    const double gn = std::hypot(g.at(0, 0), g.at(0, 1));
    const double alpha = std::hypot(0.5, 1.0) / (gn + kNormGuard);
    EXPECT_NEAR(r.fused.at(0, 0), g.at(0, 0) + alpha * 0.5, 1e-12);
    EXPECT_NEAR(r.fused.at(0, 1), g.at(0, 1) - alpha * 1.0, 1e-12);
  }
}

TEST(SoftFuse, HandExpansionAtTwoEntries) {
  // g = (1, 0); c1 = (0, 2), c2 = (1, 1).
  // cosines: 0 and 1/sqrt(2); weights softmax; q = w1 c1 + w2 c2.
  const d::Tensor g = d::Tensor::from_data({1, 2}, {1.0, 0.0});
  const d::Tensor c = d::Tensor::from_data({2, 2}, {0.0, 2.0, 1.0, 1.0});
  const double s2 = 1.0 / std::sqrt(2.0);
  const double w1 = 1.0 / (1.0 + std::exp(s2)), w2 = 1.0 - w1;
  const double q0 = w2, q1 = 2.0 * w1 + w2;
  const double alpha = std::hypot(q0, q1) / (1.0 + 1e-8);
  const FusionResult r = soft_fuse(g, c);
  EXPECT_NEAR(r.weights.at(0, 0), w1, 1e-12);
  EXPECT_NEAR(r.fused.at(0, 0), 1.0 + alpha * q0, 1e-9);
  EXPECT_NEAR(r.fused.at(0, 1), alpha * q1, 1e-9);
}

TEST(SoftFuse, WeightsArePositiveAndNormalized) {
  Rng rng(2);
  const d::Tensor g = nn::normal_tensor({20, 4}, 1.0, rng);
  const d::Tensor c = nn::normal_tensor({16, 4}, 1.0, rng);
  const FusionResult r = soft_fuse(g, c);
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 16; ++k) {
      EXPECT_GT(r.weights.at(i, k), 0.0);
      s += r.weights.at(i, k);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SoftFuse, QuantizedVectorLiesInTheConvexHull) {
  // Recover q from the fused output and check it equals the weighted
  // combination, with weights a probability vector.
  Rng rng(3);
  const std::size_t K = 4, dim = 3;
  const d::Tensor c = nn::normal_tensor({K, dim}, 1.0, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const d::Tensor g = nn::normal_tensor({1, dim}, 1.0, rng);
    const FusionResult r = soft_fuse(g, c);
    std::vector<double> q(dim, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < dim; ++j) q[j] += r.weights.at(0, k) * c.at(k, j);
    double qn = 0.0, gn = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      qn += q[j] * q[j];
      gn += g.at(0, j) * g.at(0, j);
    }
    const double alpha = std::sqrt(qn) / (std::sqrt(gn) + kNormGuard);
    for (std::size_t j = 0; j < dim; ++j) {
      EXPECT_NEAR((r.fused.at(0, j) - g.at(0, j)) / alpha, q[j], 1e-9);
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t k = 0; k < K; ++k) {
        lo = std::min(lo, c.at(k, j));
        hi = std::max(hi, c.at(k, j));
      }
      EXPECT_GE(q[j], lo - 1e-12);
      EXPECT_LE(q[j], hi + 1e-12);
    }
  }
}

std::vector<double> random_rotation(Rng& rng) {
  // Gram-Schmidt on a random 3x3 matrix.
  std::vector<double> m(9);
  for (double& v : m) v = rng.normal();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[i * 3 + k] * m[j * 3 + k];
      for (int k = 0; k < 3; ++k) m[i * 3 + k] -= dot * m[j * 3 + k];
    }
    double n = 0.0;
    for (int k = 0; k < 3; ++k) n += m[i * 3 + k] * m[i * 3 + k];
    for (int k = 0; k < 3; ++k) m[i * 3 + k] /= std::sqrt(n);
  }
  return m;
}

TEST(SoftFuse, EquivariantUnderJointRotation) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const d::Tensor R = d::Tensor::from_data({3, 3}, random_rotation(rng));
    const d::Tensor g = nn::normal_tensor({5, 3}, 1.0, rng);
    const d::Tensor c = nn::normal_tensor({6, 3}, 1.0, rng);
    const d::Tensor rotated_after = d::matmul(soft_fuse(g, c).fused, R);
    const d::Tensor rotated_before = soft_fuse(d::matmul(g, R), d::matmul(c, R)).fused;
    for (std::size_t i = 0; i < 15; ++i)
      EXPECT_NEAR(rotated_after.data()[i], rotated_before.data()[i], 1e-9);
  }
}

TEST(SoftFuse, StreamingMatchesReferenceWithGradients) {
  Rng rng(12);
  const d::Tensor g = nn::normal_tensor({300, 4}, 1.0, rng);
  const d::Tensor c = nn::normal_tensor({24, 4}, 1.0, rng);
  d::Tensor gt = d::Tensor::from_data({300, 4}, {g.data().begin(), g.data().end()}, true);
  d::Tensor ct = d::Tensor::from_data({24, 4}, {c.data().begin(), c.data().end()}, true);
  const d::Tensor upstream = nn::normal_tensor({300, 4}, 1.0, rng);
  auto run = [&](bool streaming, UtilizationAccumulator* usage) {
    gt.zero_grad();
    ct.zero_grad();
    d::Tape tape;
    const d::Tensor out = streaming ? soft_fuse_streaming(gt, ct, usage) : soft_fuse(gt, ct).fused;
    tape.backward(d::sum(d::mul(out, upstream)));
    std::vector<double> v(out.data().begin(), out.data().end());
    v.insert(v.end(), gt.grad().begin(), gt.grad().end());
    v.insert(v.end(), ct.grad().begin(), ct.grad().end());
    return v;
  };
  UtilizationAccumulator streamed(24);
  const auto a = run(true, &streamed);
  const auto b = run(false, nullptr);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-11) << i;
  UtilizationAccumulator direct(24);
  direct.add(soft_fuse(g, c).weights);
  EXPECT_EQ(streamed.rows(), 300u);
  const auto rs = streamed.report(), rd = direct.report();
  for (std::size_t k = 0; k < 24; ++k) EXPECT_NEAR(rs.mean_weight[k], rd.mean_weight[k], 1e-14);
  EXPECT_EQ(rs.utilization, rd.utilization);
  EXPECT_THROW(streamed.add_column_sums(std::vector<double>(3, 0.0), 1), DimensionError);
}

TEST(Retrieve, SelfMatchTiesAndNegation) {
  const d::Tensor c = d::Tensor::from_data({3, 2}, {1.0, 0.0, 0.0, 1.0, -1.0, 0.0});
  EXPECT_EQ(retrieve(d::Tensor::from_data({1, 2}, {0.0, 1.0}), c).index[0], 1u);
  const d::Tensor dup = d::Tensor::from_data({3, 2}, {0.0, 1.0, 1.0, 0.0, 1.0, 0.0});
  EXPECT_EQ(retrieve(d::Tensor::from_data({1, 2}, {2.0, 0.1}), dup).index[0], 1u);
  const d::Tensor pm = d::Tensor::from_data({2, 2}, {0.6, 0.8, -0.6, -0.8});
  EXPECT_EQ(retrieve(d::Tensor::from_data({1, 2}, {1.0, 1.0}), pm).index[0], 0u);
  EXPECT_EQ(retrieve(d::Tensor::from_data({1, 2}, {-1.0, -1.0}), pm).index[0], 1u);
}

TEST(Retrieve, ScaleInvariant) {
  Rng rng(5);
  const d::Tensor c = nn::normal_tensor({32, 4}, 1.0, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const d::Tensor g = nn::normal_tensor({1, 4}, 1.0, rng);
    const double s = std::exp(rng.uniform(-3.0, 3.0));
    EXPECT_EQ(retrieve(g, c).index[0], retrieve(d::scale(g, s), c).index[0]);
  }
}

TEST(Retrieve, GradientReachesOnlyTheSelectedRow) {
  Rng rng(6);
  const d::Tensor c = nn::normal_tensor({5, 3}, 1.0, rng);
  const d::Tensor g = nn::normal_tensor({1, 3}, 1.0, rng);
  d::Tape tape;
  const Retrieval r = retrieve(g, c);
  tape.backward(d::sum(r.vectors));
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_EQ(c.grad()[k * 3 + j], k == r.index[0] ? 1.0 : 0.0);
  EXPECT_FALSE(g.has_grad());
}

TEST(Utilization, Examples) {
  EXPECT_EQ(utilization(d::Tensor::full({7, 4}, 0.25)).utilization, 0.0);
  std::vector<double> peaked(4 * 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) peaked[i * 4] = 1.0;
  EXPECT_EQ(utilization(d::Tensor::from_data({3, 4}, peaked)).utilization, 0.25);
  EXPECT_THROW(utilization(d::Tensor::full({2, 4}, 0.3)), ContractError);
}

TEST(Utilization, AccumulatesAcrossBatches) {
  UtilizationAccumulator acc(2);
  acc.add(d::Tensor::from_data({1, 2}, {0.9, 0.1}));
  acc.add(d::Tensor::from_data({1, 2}, {0.0, 1.0}));
  acc.add(d::Tensor::from_data({1, 2}, {0.0, 1.0}));
  const UtilizationReport r = acc.report();
  EXPECT_NEAR(r.mean_weight[0], 0.3, 1e-15);
  EXPECT_EQ(r.utilization, 0.5);
  EXPECT_EQ(acc.rows(), 3u);
}

}  // namespace
}  // namespace dbgl::codebook
