#pragma once

// Synthetic datasets shared by the unit and acceptance tests.

#include <cstdint>
#include <vector>

#include "dbgl/synthetic.h"

namespace dbgl::testing {

// Two OU variables with rates 0.05 and 2.0 per hour, dense enough that every
// lag bin of the default 2 h window is informative for both.
inline data::SyntheticConfig decay_recovery_config(std::uint64_t seed) {
  data::SyntheticConfig c = nlohmann::json{{"num_variables", 2},
                                           {"decay_rates", {0.05, 2.0}},
                                           {"expected_observations", {32.0, 32.0}},
                                           {"horizon", 8.0},
                                           {"num_episodes", 500},
                                           {"seed", seed}}
                                .get<data::SyntheticConfig>();
  return c;
}

// Pairs of observations exactly `lag` hours apart from a stationary OU
// process, one pair per episode.
inline data::Dataset ou_pairs(double lambda, double lag, std::size_t episodes,
                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::Observation> obs;
  std::map<std::string, int> labels;
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::string id = "p" + std::to_string(e);
    const auto path = data::sample_ou_path({1.0, 1.0 + lag}, 0.0, lambda, 1.0, rng);
    obs.push_back({id, 1.0, 0, path[0]});
    obs.push_back({id, 1.0 + lag, 0, path[1]});
    labels[id] = 0;
  }
  return data::build_dataset({"x"}, obs, labels, 8.0);
}

// 64 episodes over three variables with a deterministic label on the mean
// features, z-scored with its own statistics.
inline data::Dataset learnability_dataset(std::uint64_t seed) {
  const data::SyntheticConfig c = nlohmann::json{{"num_variables", 3},
                                                 {"num_episodes", 64},
                                                 {"expected_observations", {8.0, 8.0, 8.0}},
                                                 {"seed", seed}}
                                      .get<data::SyntheticConfig>();
  const data::Dataset raw = data::synthesize(c);
  return data::normalize(raw, data::fit_normalization(raw));
}

}  // namespace dbgl::testing
