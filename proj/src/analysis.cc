#include "dbgl/analysis.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>

#include "dbgl/errors.h"

namespace dbgl::analysis {

namespace {

struct PairSums {
  double n = 0, lag = 0, x = 0, y = 0, xx = 0, yy = 0, xy = 0;
};

}  // namespace

AutocorrEstimate empirical_autocorr(const data::Dataset& ds, std::size_t v,
                                    std::span<const std::size_t> episodes,
                                    const LagBinning& binning) {
  if (v >= ds.num_variables())
    throw ValidationError("empirical_autocorr: variable index " + std::to_string(v) +
                          " out of range");
  if (binning.bins < 1) throw ConfigError("empirical_autocorr needs at least one bin");
  const double max_lag = binning.max_lag.value_or(ds.t_max / 4.0);
  if (!(max_lag > 0.0)) throw ConfigError("empirical_autocorr: maximum lag must be positive");
  const double width = max_lag / static_cast<double>(binning.bins);
  std::vector<PairSums> sums(binning.bins);
  std::vector<double> t, x;
  for (std::size_t e : episodes) {
    const data::Episode& ep = ds.episodes.at(e);
    t.clear();
    x.clear();
    for (std::size_t s = 0; s < ep.steps(); ++s) {
      if (!ep.observed(s, v)) continue;
      t.push_back(ep.times[s]);
      x.push_back(ep.value(s, v));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      for (std::size_t j = i + 1; j < t.size(); ++j) {
        const double lag = t[j] - t[i];
        if (lag > max_lag) break;
        if (lag <= 0.0) continue;
        const std::size_t b =
            std::min(binning.bins - 1, static_cast<std::size_t>(lag / width));
        PairSums& s = sums[b];
        s.n += 1;
        s.lag += lag;
        s.x += x[i];
        s.y += x[j];
        s.xx += x[i] * x[i];
        s.yy += x[j] * x[j];
        s.xy += x[i] * x[j];
      }
    }
  }
  AutocorrEstimate est;
  bool usable = false;
  for (std::size_t b = 0; b < binning.bins; ++b) {
    const PairSums& s = sums[b];
    LagBin bin;
    bin.lo = width * static_cast<double>(b);
    bin.hi = width * static_cast<double>(b + 1);
    bin.pairs = static_cast<std::size_t>(s.n);
    bin.mean_lag = s.n > 0 ? s.lag / s.n : 0.5 * (bin.lo + bin.hi);
    if (bin.pairs < binning.min_pairs) {
      bin.flag = "too few pairs";
    } else {
      const double cov = s.xy / s.n - (s.x / s.n) * (s.y / s.n);
      const double vx = s.xx / s.n - (s.x / s.n) * (s.x / s.n);
      const double vy = s.yy / s.n - (s.y / s.n) * (s.y / s.n);
      if (!(vx > 1e-12 * (1.0 + s.xx / s.n)) || !(vy > 1e-12 * (1.0 + s.yy / s.n))) {
        bin.flag = "zero variance";
      } else {
        bin.correlation = std::clamp(cov / std::sqrt(vx * vy), -1.0, 1.0);
        usable = true;
      }
    }
    est.bins.push_back(bin);
  }
  if (!usable)
    throw InsufficientDataError("variable " + ds.variables[v] +
                                ": no lag bin has enough varying pairs");
  return est;
}

AutocorrEstimate empirical_autocorr(const data::Dataset& ds, std::size_t v,
                                    const LagBinning& binning) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return empirical_autocorr(ds, v, all, binning);
}

DecayFit fit_lambda(std::span<const double> lags, std::span<const double> correlations) {
  if (lags.size() != correlations.size())
    throw DimensionError("fit_lambda: lag and correlation counts differ");
  double num = 0.0, den = 0.0;
  std::vector<std::pair<double, double>> used;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    if (!(correlations[i] > kMinFitCorrelation) || !(lags[i] > 0.0)) continue;
    const double y = std::log(correlations[i]);
    num += lags[i] * y;
    den += lags[i] * lags[i];
    used.emplace_back(lags[i], y);
  }
  if (used.size() < 2)
    throw InsufficientDataError("fit_lambda needs at least two lags with correlation > 0.01");
  DecayFit fit;
  fit.lambda = std::max(0.0, -num / den);
  fit.bins_used = used.size();
  double ss = 0.0;
  for (const auto& [lag, y] : used) ss += (y + fit.lambda * lag) * (y + fit.lambda * lag);
  fit.residual = std::sqrt(ss / static_cast<double>(used.size()));
  return fit;
}

DecayFit fit_lambda(const AutocorrEstimate& estimate) {
  std::vector<double> lags, corrs;
  for (const LagBin& b : estimate.bins) {
    if (!b.correlation) continue;
    lags.push_back(b.mean_lag);
    corrs.push_back(*b.correlation);
  }
  return fit_lambda(lags, corrs);
}

double chi_squared_survival(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw ValidationError("Kruskal-Wallis needs at least two groups");
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty())
      throw ValidationError("Kruskal-Wallis: group " + std::to_string(g) + " is empty");
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw ValidationError("Kruskal-Wallis: non-finite value");
      pooled.emplace_back(v, g);
    }
  }
  const double n = static_cast<double>(pooled.size());
  if (pooled.size() < 3) throw ValidationError("Kruskal-Wallis needs at least three values");
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].second] += mid_rank;
    i = j;
  }
  KruskalWallis r;
  r.df = groups.size() - 1;
  const double correction = 1.0 - tie_term / (n * n * n - n);
  if (correction <= 0.0) return r;  // every value identical
  double s = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g)
    s += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  const double h = (12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction;
  r.h = std::max(0.0, h);
  // Rounding can leave a tiny positive H when all mean ranks coincide.
  std::vector<double> mean_rank(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    mean_rank[g] = rank_sum[g] / static_cast<double>(groups[g].size());
  if (std::all_of(mean_rank.begin(), mean_rank.end(),
                  [&](double m) { return m == mean_rank[0]; }))
    r.h = 0.0;
  r.p = chi_squared_survival(r.h, static_cast<double>(r.df));
  return r;
}

DecayReport analyze_decay(const data::Dataset& ds, const LagBinning& binning,
                          std::size_t blocks) {
  DecayReport report;
  const std::size_t V = ds.num_variables();
  report.block_estimates.assign(V, {});
  for (std::size_t v = 0; v < V; ++v) {
    VariableDecay row{ds.variables[v], std::nullopt, ""};
    try {
      row.fit = fit_lambda(empirical_autocorr(ds, v, binning));
    } catch (const InsufficientDataError& e) {
      row.note = e.what();
    }
    report.variables.push_back(row);
    for (std::size_t b = 0; b < blocks; ++b) {
      std::vector<std::size_t> members;
      for (std::size_t e = b; e < ds.size(); e += blocks) members.push_back(e);
      try {
        report.block_estimates[v].push_back(
            fit_lambda(empirical_autocorr(ds, v, members, binning)).lambda);
      } catch (const InsufficientDataError&) {
      }
    }
  }
  if (V < 2) {
    report.kruskal_wallis_note =
        "Kruskal-Wallis needs at least two variables (groups); this dataset has " +
        std::to_string(V);
    return report;
  }
  for (std::size_t v = 0; v < V; ++v) {
    if (report.block_estimates[v].empty()) {
      report.kruskal_wallis_note = "variable " + ds.variables[v] +
                                   " has no block with enough data for a rate estimate";
      return report;
    }
  }
  try {
    report.kruskal_wallis = kruskal_wallis(report.block_estimates);
  } catch (const ValidationError& e) {
    report.kruskal_wallis_note = e.what();
  }
  return report;
}

}  // namespace dbgl::analysis
