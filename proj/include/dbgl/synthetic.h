#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "dbgl/data.h"
#include "dbgl/rng.h"

namespace dbgl::data {

// Label model over per-variable summary features. Features are ordered
// [mean_0..mean_{V-1}, last_0..last_{V-1}, rate_0..rate_{V-1}] where mean and
// last are the observed latent values standardized by the stationary
// distribution, and rate is the observed count over its expectation.
// Binary tasks use one weight row (the positive-class logit); C > 2 uses one
// row per class.
struct LabelRule {
  std::vector<std::vector<double>> weights;
  std::vector<double> bias;
  // true: argmax / sign rule; false: sample from the logistic model.
  bool deterministic = true;
};

struct SyntheticConfig {
  std::size_t num_variables = 4;
  std::vector<double> decay_rates;            // lambda_v > 0, per hour
  std::vector<double> means;                  // mu_v
  std::vector<double> noise_scales;           // sigma_v
  std::vector<double> expected_observations;  // per variable per episode
  // Gaussian noise sd added to recorded values; label features always use
  // the latent path.
  std::vector<double> measurement_noise;
  double missing_prob = 0.0;
  double horizon = 48.0;                      // hours; also t_max
  double time_resolution = 0.0;               // round times to this grid; 0 = off
  std::size_t num_episodes = 100;
  int num_classes = 2;
  LabelRule label;
  std::uint64_t seed = 0;

  // Throws ValidationError on any inconsistency.
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
// Missing per-variable lists default to lambda = 1, mu = 0, sigma = 1 and
// 10 expected observations and no measurement noise; a missing label rule weights the mean features (alternating signs for
// binary tasks, rotated phases per class otherwise).
void from_json(const nlohmann::json& j, SyntheticConfig& c);

// One exact Ornstein-Uhlenbeck transition over `dt` hours given a standard
// normal draw `xi`.
double ou_step(double x, double mu, double lambda, double sigma, double dt,
               double xi);
double ou_stationary_sd(double lambda, double sigma);

// Sample path of one variable at the given increasing times, started from the
// stationary distribution at time 0.
std::vector<double> sample_ou_path(const std::vector<double>& times, double mu,
                                   double lambda, double sigma, Rng& rng);

Dataset synthesize(const SyntheticConfig& config);

}  // namespace dbgl::data
