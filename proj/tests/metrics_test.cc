#include "dbgl/metrics.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "dbgl/errors.h"
#include "dbgl/rng.h"
#include "metric_oracles.h"

namespace dbgl::metrics {
namespace {

constexpr double kExact = 1e-12;

using namespace dbgl::testing;

TEST(Auroc, Examples) {
  EXPECT_DOUBLE_EQ(auroc(std::vector{0.9, 0.8, 0.2, 0.1}, std::vector{1, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auroc(std::vector{0.3, 0.7}, std::vector{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(auroc(std::vector{0.5, 0.5}, std::vector{1, 0}), 0.5);
}

TEST(Auroc, SingleClassIsUndefined) {
  EXPECT_THROW(auroc(std::vector{0.1, 0.2}, std::vector{1, 1}), UndefinedMetricError);
  EXPECT_THROW(auroc(std::vector{0.1, 0.2}, std::vector{0, 0}), UndefinedMetricError);
}

TEST(Metrics, MatchBruteForceOraclesOn200Instances) {
  int auroc_checked = 0, auprc_checked = 0;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const Instance in = random_instance(seed);
    SCOPED_TRACE(seed);
    if (has_both(in)) {
      EXPECT_NEAR(auroc(in.scores, in.labels), pairwise_auroc(in), kExact);
      ++auroc_checked;
    }
    if (std::count(in.labels.begin(), in.labels.end(), 1) > 0) {
      EXPECT_NEAR(auprc(in.scores, in.labels), threshold_auprc(in), kExact);
      ++auprc_checked;
    }
    EXPECT_NEAR(ece(in.scores, in.labels), binned_ece(in, 10), kExact);
    EXPECT_NEAR(ece(in.scores, in.labels, 7), binned_ece(in, 7), kExact);
    EXPECT_NEAR(brier(in.scores, in.labels), direct_brier(in), kExact);
  }
  EXPECT_GT(auroc_checked, 150);
  EXPECT_GT(auprc_checked, 180);
}

TEST(Auroc, InvariantUnderIncreasingMaps) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Instance in = random_instance(seed);
    if (!has_both(in)) continue;
    Rng rng(seed + 1000);
    const double a = 0.1 + 5.0 * rng.uniform();
    const double b = rng.normal();
    std::vector<double> mapped;
    for (double s : in.scores) mapped.push_back(std::exp(a * s + b) + std::pow(s, 3));
    EXPECT_NEAR(auroc(mapped, in.labels), auroc(in.scores, in.labels), kExact);
  }
}

TEST(Auroc, ComplementSumsToOneWithoutTies) {
  for (std::uint64_t seed = 1; seed <= 100; seed += 2) {  // odd seeds are tie-free
    const Instance in = random_instance(seed);
    if (!has_both(in)) continue;
    std::vector<double> flipped;
    for (double s : in.scores) flipped.push_back(1.0 - s);
    EXPECT_NEAR(auroc(in.scores, in.labels) + auroc(flipped, in.labels), 1.0, kExact);
  }
}

TEST(Auprc, Examples) {
  EXPECT_DOUBLE_EQ(auprc(std::vector{0.9, 0.8, 0.2, 0.1}, std::vector{1, 1, 0, 0}), 1.0);
  // Constant scores collapse the curve to a single point at the prevalence.
  EXPECT_DOUBLE_EQ(auprc(std::vector{0.4, 0.4, 0.4, 0.4, 0.4}, std::vector{1, 0, 0, 1, 0}),
                   0.4);
  // Ranks 1 and 3 positive: 0.5 * 1 + 0.5 * 2/3.
  EXPECT_NEAR(auprc(std::vector{0.9, 0.5, 0.4}, std::vector{1, 0, 1}), 0.5 + 1.0 / 3.0,
              kExact);
  EXPECT_THROW(auprc(std::vector{0.1}, std::vector{0}), UndefinedMetricError);
}

TEST(Auprc, PerfectOrderingIsAtLeastPrevalence) {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Instance in = random_instance(seed);
    const double pos = std::count(in.labels.begin(), in.labels.end(), 1);
    if (pos == 0) continue;
    for (std::size_t i = 0; i < in.scores.size(); ++i)
      in.scores[i] = in.labels[i] ? 0.9 : 0.1;
    EXPECT_GE(auprc(in.scores, in.labels), pos / in.labels.size());
  }
}

TEST(Ece, Examples) {
  EXPECT_NEAR(ece(std::vector(5, 0.8), std::vector{1, 1, 1, 1, 0}), 0.0, kExact);
  EXPECT_DOUBLE_EQ(ece(std::vector{1.0}, std::vector{0}), 1.0);
  EXPECT_DOUBLE_EQ(ece(std::vector{0.0}, std::vector{0}), 0.0);
  // Two bins, each off by 0.25, half the mass each.
  EXPECT_NEAR(ece(std::vector{0.25, 0.75}, std::vector{0, 1}, 2), 0.25, kExact);
  EXPECT_THROW(ece(std::vector{0.5}, std::vector{1}, 0), ConfigError);
  EXPECT_THROW(ece(std::vector{1.5}, std::vector{1}), ValidationError);
}

TEST(Brier, Examples) {
  EXPECT_DOUBLE_EQ(brier(std::vector{1.0}, std::vector{1}), 0.0);
  EXPECT_DOUBLE_EQ(brier(std::vector{0.5}, std::vector{0}), 0.25);
  EXPECT_DOUBLE_EQ(brier(std::vector{0.5}, std::vector{1}), 0.25);
  EXPECT_DOUBLE_EQ(brier(std::vector(6, 0.5), std::vector{1, 0, 1, 0, 1, 0}), 0.25);
}

TEST(Brier, ConcatenationIsWeightedMean) {
  const Instance a = random_instance(3), b = random_instance(8);
  std::vector<double> s = a.scores;
  std::vector<int> l = a.labels;
  s.insert(s.end(), b.scores.begin(), b.scores.end());
  l.insert(l.end(), b.labels.begin(), b.labels.end());
  const double na = a.scores.size(), nb = b.scores.size();
  EXPECT_NEAR(brier(s, l),
              (na * brier(a.scores, a.labels) + nb * brier(b.scores, b.labels)) / (na + nb),
              kExact);
}

TEST(MeanPosProb, Examples) {
  EXPECT_DOUBLE_EQ(mean_pos_prob(std::vector{0.7}, std::vector{1}), 0.7);
  EXPECT_NEAR(mean_pos_prob(std::vector{0.6, 0.8}, std::vector{1, 1}), 0.7, kExact);
  EXPECT_NEAR(mean_pos_prob(std::vector{0.6, 0.1, 0.8, 0.99}, std::vector{1, 0, 1, 0}), 0.7,
              kExact);
  EXPECT_THROW(mean_pos_prob(std::vector{0.6}, std::vector{0}), UndefinedMetricError);
}

TEST(Metrics, RejectMalformedInput) {
  EXPECT_THROW(auroc(std::vector{0.1, 0.2}, std::vector{1}), DimensionError);
  EXPECT_THROW(auroc(std::vector{0.1, 0.2}, std::vector{1, 2}), ValidationError);
  EXPECT_THROW(brier(std::vector{std::nan("")}, std::vector{1}), ValidationError);
}

TEST(BinaryReport, FillsWhatIsDefined) {
  const BinaryReport perfect =
      binary_report(std::vector{0.9, 0.8, 0.2, 0.1}, std::vector{1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(*perfect.auroc, 1.0);
  EXPECT_DOUBLE_EQ(*perfect.auprc, 1.0);
  EXPECT_EQ(perfect.n_pos, 2u);
  EXPECT_EQ(perfect.n_neg, 2u);
  const BinaryReport negatives = binary_report(std::vector{0.2, 0.3}, std::vector{0, 0});
  EXPECT_FALSE(negatives.auroc);
  EXPECT_FALSE(negatives.auprc);
  EXPECT_FALSE(negatives.mean_pos_prob);
  EXPECT_NEAR(negatives.brier, (0.04 + 0.09) / 2, kExact);
}

TEST(BinaryReport, ValuesStayInUnitInterval) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const Instance in = random_instance(seed);
    const BinaryReport r = binary_report(in.scores, in.labels);
    for (auto v : {r.auroc, r.auprc, std::optional(r.ece), std::optional(r.brier)}) {
      if (!v) continue;
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
    }
  }
}

TEST(Multiclass, HandCountedExample) {
  // class 0: tp 1 of 2 predicted, 1 of 2 true; class 1: tp 1/1, 1/2;
  // class 2: tp 1/2, 1/1.
  const std::vector<int> pred{0, 0, 1, 2, 2};
  const std::vector<int> truth{0, 1, 1, 2, 0};
  const MulticlassReport r = multiclass_report(pred, truth, 3);
  EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 5.0);
  EXPECT_NEAR(r.macro_precision, (0.5 + 1.0 + 0.5) / 3, kExact);
  EXPECT_NEAR(r.macro_recall, (0.5 + 0.5 + 1.0) / 3, kExact);
  const double f1_0 = 0.5, f1_1 = 2.0 / 3.0, f1_2 = 2.0 / 3.0;
  EXPECT_NEAR(r.macro_f1, (f1_0 + f1_1 + f1_2) / 3, kExact);
  EXPECT_EQ(r.support, (std::vector<std::size_t>{2, 2, 1}));
}

TEST(Multiclass, AbsentClassScoresZero) {
  const MulticlassReport r = multiclass_report(std::vector{0, 0}, std::vector{0, 0}, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_precision, 0.5);
  EXPECT_DOUBLE_EQ(r.macro_f1, 0.5);
  EXPECT_THROW(multiclass_report(std::vector{3}, std::vector{0}, 3), ValidationError);
}

}  // namespace
}  // namespace dbgl::metrics
