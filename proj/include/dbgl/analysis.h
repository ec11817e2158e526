#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbgl/data.h"

namespace dbgl::analysis {

struct LagBinning {
  std::size_t bins = 10;
  std::optional<double> max_lag;  // default: t_max / 4
  std::size_t min_pairs = 5;
};

struct LagBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_lag = 0.0;  // average lag of the pairs in the bin
  std::size_t pairs = 0;
  std::optional<double> correlation;  // empty when excluded
  std::string flag;                   // reason for exclusion
};

struct AutocorrEstimate {
  std::vector<LagBin> bins;
};

// Pearson correlation of (earlier, later) values over every within-episode
// pair of observations of variable `v`, grouped by lag into equal-width bins
// over (0, max_lag]. Bins with fewer than `min_pairs` pairs or zero variance
// are excluded with a flag. Throws InsufficientDataError when no bin is
// usable.
AutocorrEstimate empirical_autocorr(const data::Dataset& ds, std::size_t v,
                                    const LagBinning& binning = {});

// Same, restricted to the given episodes.
AutocorrEstimate empirical_autocorr(const data::Dataset& ds, std::size_t v,
                                    std::span<const std::size_t> episodes,
                                    const LagBinning& binning = {});

struct DecayFit {
  double lambda = 0.0;
  double residual = 0.0;  // RMS of ln(corr) + lambda * lag over used bins
  std::size_t bins_used = 0;
};

inline constexpr double kMinFitCorrelation = 0.01;

// Least squares of ln(corr) = -lambda * lag through the origin over points
// with corr > 0.01, clamped at 0. Throws InsufficientDataError with fewer
// than two such points.
DecayFit fit_lambda(std::span<const double> lags, std::span<const double> correlations);
DecayFit fit_lambda(const AutocorrEstimate& estimate);

struct KruskalWallis {
  double h = 0.0;
  std::size_t df = 0;
  double p = 1.0;
};

// Tie-corrected H with a chi-squared(G - 1) p-value. Throws ValidationError
// for fewer than two groups, an empty group or fewer than three values.
KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups);

// Upper tail of the chi-squared distribution.
double chi_squared_survival(double x, double df);

// --- Dataset-level report ---------------------------------------------------

struct VariableDecay {
  std::string variable;
  std::optional<DecayFit> fit;  // empty when the data were insufficient
  std::string note;
};

struct DecayReport {
  std::vector<VariableDecay> variables;
  // Per-variable rate estimates over episode blocks (episode index modulo
  // `blocks`), the samples behind the heterogeneity test.
  std::vector<std::vector<double>> block_estimates;
  std::optional<KruskalWallis> kruskal_wallis;
  std::string kruskal_wallis_note;  // why the test was not run
};

DecayReport analyze_decay(const data::Dataset& ds, const LagBinning& binning = {},
                          std::size_t blocks = 10);

}  // namespace dbgl::analysis
