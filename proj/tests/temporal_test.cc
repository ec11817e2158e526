#include "dbgl/temporal.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dbgl/errors.h"

namespace dbgl::temporal {
namespace {

namespace d = diff;

constexpr DecayKind kAllKinds[] = {DecayKind::kMlpExp, DecayKind::kFixedExp,
                                   DecayKind::kMlpGaussian, DecayKind::kMlpLinear};

d::Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return d::Tensor::from_data({n, 1}, std::move(v));
}

TEST(DecayKind, NamesRoundTrip) {
  for (DecayKind k : kAllKinds) EXPECT_EQ(parse_decay_kind(to_string(k)), k);
  EXPECT_THROW(parse_decay_kind("cubic"), ConfigError);
}

TEST(DecayFactor, WorkedExamples) {
  for (DecayKind k : kAllKinds) {
    EXPECT_EQ(decay_factor(3.0, 0.0, k), 1.0);
    EXPECT_EQ(decay_factor(column({3.0}), column({0.0}), k).item(), 1.0);
  }
  EXPECT_NEAR(decay_factor(column({std::numbers::ln2}), column({1.0}), DecayKind::kMlpExp).item(),
              0.5, 1e-15);
  EXPECT_EQ(decay_factor(column({1.0}), column({2.0}), DecayKind::kMlpLinear).item(), 0.0);
  EXPECT_THROW(decay_factor(column({1.0}), column({-0.1}), DecayKind::kMlpExp), ContractError);
  EXPECT_THROW(decay_factor(1.0, -0.1, DecayKind::kMlpExp), ContractError);
}

TEST(DecayFactor, TensorAndScalarFormsAgree) {
  Rng rng(3);
  for (DecayKind k : kAllKinds)
    for (int i = 0; i < 50; ++i) {
      const double lambda = rng.uniform(0.0, 5.0), dt = rng.uniform(0.0, 3.0);
      EXPECT_DOUBLE_EQ(decay_factor(column({lambda}), column({dt}), k).item(),
                       decay_factor(lambda, dt, k));
    }
}

TEST(DecayFactor, MonotoneAndBoundedOnAGrid) {
  Rng rng(4);
  for (DecayKind k : kAllKinds) {
    for (int trial = 0; trial < 20; ++trial) {
      const double lambda = std::exp(rng.uniform(-5.0, 3.0));
      double prev = 1.0;
      for (int i = 0; i < 50; ++i) {
        const double dt = 0.25 * i;
        const double g = decay_factor(lambda, dt, k);
        EXPECT_LE(g, prev);
        EXPECT_LE(g, 1.0);
        if (k == DecayKind::kMlpLinear) EXPECT_GE(g, 0.0);
        else EXPECT_GT(g, 0.0);
        prev = g;
      }
    }
  }
}

TEST(DecayFactor, ExpAndGaussianStayPositiveForHugeIntervals) {
  for (DecayKind k : {DecayKind::kMlpExp, DecayKind::kFixedExp, DecayKind::kMlpGaussian}) {
    for (double lambda : {1e-3, 1.0, 50.0, 1e6, 1e300}) {
      const double g = decay_factor(lambda, 1e3, k);
      EXPECT_GT(g, 0.0);
      EXPECT_TRUE(std::isnormal(g));
      const d::Tensor gt = decay_factor(column({lambda}), column({1e3}), k);
      EXPECT_EQ(gt.item(), g);
    }
  }
}

TEST(DecayRate, NeverNegative) {
  Rng rng(5);
  for (DecayKind k : kAllKinds) {
    const DecayParams p = DecayParams::create(k, 4, rng);
    const d::Tensor edges = nn::normal_tensor({30, 4}, 10.0, rng);
    const d::Tensor rate = decay_rate(edges, p);
    for (double v : rate.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(DecayState, ScalesRows) {
  const d::Tensor h = d::Tensor::from_data({1, 2}, {2.0, 2.0});
  const d::Tensor half = decay_state(h, column({0.5}));
  EXPECT_EQ(half.at(0, 0), 1.0);
  EXPECT_EQ(half.at(0, 1), 1.0);
  const d::Tensor same = decay_state(h, column({1.0}));
  EXPECT_EQ(same.at(0, 1), 2.0);
  const d::Tensor gone = decay_state(h, column({1e-300}));
  EXPECT_LT(std::abs(gone.at(0, 0)), 1e-299);
}

TEST(GatedUpdate, EndpointsAndConvexity) {
  Rng rng(6);
  const d::Tensor h = nn::normal_tensor({5, 3}, 1.0, rng);
  const d::Tensor e = nn::normal_tensor({5, 3}, 1.0, rng);
  const d::Tensor zero = d::Tensor::zeros({5, 3});
  const d::Tensor one = d::Tensor::full({5, 3}, 1.0);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(blend(h, e, zero).data()[i], h.data()[i]);
    EXPECT_EQ(blend(h, e, one).data()[i], e.data()[i]);
  }
  const GateParams gp = GateParams::create(3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const d::Tensor hh = nn::normal_tensor({4, 3}, 3.0, rng);
    const d::Tensor ee = nn::normal_tensor({4, 3}, 3.0, rng);
    const d::Tensor out = gated_update(ee, hh, gp);
    for (std::size_t i = 0; i < 12; ++i) {
      EXPECT_GE(out.data()[i], std::min(hh.data()[i], ee.data()[i]));
      EXPECT_LE(out.data()[i], std::max(hh.data()[i], ee.data()[i]));
    }
  }
}

TEST(Attention, SingleVariableAttendsToItsOnlyState) {
  Rng rng(7);
  const AttentionParams p = AttentionParams::create(4, rng);
  const d::Tensor q = nn::normal_tensor({2, 4}, 1.0, rng);
  const d::Tensor h = nn::normal_tensor({2, 4}, 1.0, rng);  // V = 1
  d::Tensor w;
  const d::Tensor out = node_specific_attention(q, h, p, &w);
  const d::Tensor expected = d::matmul(h, p.projection);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.data()[i], expected.data()[i], 1e-15);
  for (double v : w.data()) EXPECT_EQ(v, 1.0);
}

TEST(Attention, IdenticalStatesGiveThatState) {
  Rng rng(8);
  const std::size_t V = 5, dim = 3;
  const AttentionParams p = AttentionParams::create(dim, rng);
  d::Tensor eye = d::Tensor::zeros({dim, dim});
  for (std::size_t k = 0; k < dim; ++k) eye.mutable_data()[k * dim + k] = 1.0;
  const AttentionParams identity{eye};
  const std::vector<double> u = {0.3, -1.0, 2.0};
  std::vector<double> bank;
  for (std::size_t n = 0; n < V; ++n) bank.insert(bank.end(), u.begin(), u.end());
  const d::Tensor q = nn::normal_tensor({1, dim}, 5.0, rng);
  d::Tensor w;
  const d::Tensor out =
      node_specific_attention(q, d::Tensor::from_data({V, dim}, bank), identity, &w);
  for (std::size_t k = 0; k < dim; ++k) EXPECT_NEAR(out.data()[k], u[k], 1e-12);
}

TEST(Attention, WeightsSumToOne) {
  Rng rng(9);
  const std::size_t B = 3, V = 6, dim = 4;
  const AttentionParams p = AttentionParams::create(dim, rng);
  d::Tensor w;
  node_specific_attention(nn::normal_tensor({B, dim}, 2.0, rng),
                          nn::normal_tensor({B * V, dim}, 2.0, rng), p, &w);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t n = 0; n < V; ++n) {
      EXPECT_GT(w.at(b, n), 0.0);
      s += w.at(b, n);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, MatchesDirectFormula) {
  Rng rng(10);
  const std::size_t V = 3, dim = 2;
  const AttentionParams p = AttentionParams::create(dim, rng);
  const d::Tensor q = nn::normal_tensor({1, dim}, 1.0, rng);
  const d::Tensor h = nn::normal_tensor({V, dim}, 1.0, rng);
  const d::Tensor out = node_specific_attention(q, h, p);
  std::vector<double> s(V);
  double z = 0.0;
  for (std::size_t n = 0; n < V; ++n) {
    for (std::size_t k = 0; k < dim; ++k) s[n] += q.data()[k] * h.at(n, k);
    s[n] = std::exp(s[n] / std::sqrt(2.0));
    z += s[n];
  }
  std::vector<double> a(dim, 0.0);
  for (std::size_t n = 0; n < V; ++n)
    for (std::size_t k = 0; k < dim; ++k) a[k] += s[n] / z * h.at(n, k);
  for (std::size_t j = 0; j < dim; ++j) {
    double expected = 0.0;
    for (std::size_t k = 0; k < dim; ++k) expected += a[k] * p.projection.at(k, j);
    EXPECT_NEAR(out.data()[j], expected, 1e-12);
  }
}

}  // namespace
}  // namespace dbgl::temporal
