#include "dbgl/synthetic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "dbgl/errors.h"

namespace dbgl::data {

void SyntheticConfig::validate() const {
  const std::size_t V = num_variables;
  if (V == 0) throw ValidationError("synthetic config: num_variables must be >= 1");
  auto check_len = [V](const std::vector<double>& v, const char* name) {
    if (v.size() != V) {
      throw ValidationError(std::string("synthetic config: ") + name + " has " +
                            std::to_string(v.size()) + " entries, expected " +
                            std::to_string(V));
    }
  };
  check_len(decay_rates, "decay_rates");
  check_len(means, "means");
  check_len(noise_scales, "noise_scales");
  check_len(expected_observations, "expected_observations");
  check_len(measurement_noise, "measurement_noise");
  for (std::size_t v = 0; v < V; ++v) {
    if (!(decay_rates[v] > 0.0) || !std::isfinite(decay_rates[v]))
      throw ValidationError("synthetic config: decay rates must be positive");
    if (!(noise_scales[v] >= 0.0))
      throw ValidationError("synthetic config: noise scales must be non-negative");
    if (!(expected_observations[v] >= 0.0))
      throw ValidationError("synthetic config: expected observations must be >= 0");
    if (!(measurement_noise[v] >= 0.0))
      throw ValidationError("synthetic config: measurement noise must be >= 0");
  }
  if (!(missing_prob >= 0.0 && missing_prob < 1.0))
    throw ValidationError("synthetic config: missing_prob must lie in [0, 1)");
  if (!(horizon > 0.0)) throw ValidationError("synthetic config: horizon must be positive");
  if (time_resolution < 0.0)
    throw ValidationError("synthetic config: time_resolution must be >= 0");
  if (num_classes < 2) throw ValidationError("synthetic config: num_classes must be >= 2");
  const std::size_t rows = num_classes == 2 ? 1 : static_cast<std::size_t>(num_classes);
  if (label.weights.size() != rows || label.bias.size() != rows) {
    throw ValidationError("synthetic config: label rule needs " + std::to_string(rows) +
                          " weight rows and biases");
  }
  for (const auto& w : label.weights)
    if (w.size() != 3 * V)
      throw ValidationError("synthetic config: each label weight row needs 3*V entries");
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = nlohmann::json{
      {"num_variables", c.num_variables},
      {"decay_rates", c.decay_rates},
      {"means", c.means},
      {"noise_scales", c.noise_scales},
      {"expected_observations", c.expected_observations},
      {"measurement_noise", c.measurement_noise},
      {"missing_prob", c.missing_prob},
      {"horizon", c.horizon},
      {"time_resolution", c.time_resolution},
      {"num_episodes", c.num_episodes},
      {"num_classes", c.num_classes},
      {"label",
       {{"weights", c.label.weights},
        {"bias", c.label.bias},
        {"deterministic", c.label.deterministic}}},
      {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  c = SyntheticConfig{};
  c.num_variables = j.value("num_variables", std::size_t{4});
  const std::size_t V = c.num_variables;
  c.decay_rates = j.value("decay_rates", std::vector<double>(V, 1.0));
  c.means = j.value("means", std::vector<double>(V, 0.0));
  c.noise_scales = j.value("noise_scales", std::vector<double>(V, 1.0));
  c.expected_observations =
      j.value("expected_observations", std::vector<double>(V, 10.0));
  c.measurement_noise = j.value("measurement_noise", std::vector<double>(V, 0.0));
  c.missing_prob = j.value("missing_prob", 0.0);
  c.horizon = j.value("horizon", 48.0);
  c.time_resolution = j.value("time_resolution", 0.0);
  c.num_episodes = j.value("num_episodes", std::size_t{100});
  c.num_classes = j.value("num_classes", 2);
  c.seed = j.value("seed", std::uint64_t{0});
  const std::size_t rows = c.num_classes == 2 ? 1 : static_cast<std::size_t>(c.num_classes);
  if (j.contains("label")) {
    const auto& l = j.at("label");
    c.label.weights = l.at("weights").get<std::vector<std::vector<double>>>();
    c.label.bias = l.value("bias", std::vector<double>(rows, 0.0));
    c.label.deterministic = l.value("deterministic", true);
  } else {
    c.label.weights.assign(rows, std::vector<double>(3 * V, 0.0));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t v = 0; v < V; ++v)
        c.label.weights[r][v] =
            rows == 1 ? ((v % 2 == 0) ? 1.0 : -1.0)
                      : std::cos(2.0 * M_PI * static_cast<double>(r) / rows +
                                 static_cast<double>(v));
    c.label.bias.assign(rows, 0.0);
  }
}

double ou_stationary_sd(double lambda, double sigma) {
  return sigma / std::sqrt(2.0 * lambda);
}

double ou_step(double x, double mu, double lambda, double sigma, double dt,
               double xi) {
  const double decay = std::exp(-lambda * dt);
  // -expm1(-2 lambda dt) keeps precision for tiny steps.
  const double var = sigma * sigma * (-std::expm1(-2.0 * lambda * dt)) / (2.0 * lambda);
  return mu + (x - mu) * decay + std::sqrt(var) * xi;
}

std::vector<double> sample_ou_path(const std::vector<double>& times, double mu,
                                   double lambda, double sigma, Rng& rng) {
  std::vector<double> path;
  path.reserve(times.size());
  double x = mu + ou_stationary_sd(lambda, sigma) * rng.normal();
  double t = 0.0;
  for (double ti : times) {
    x = ou_step(x, mu, lambda, sigma, ti - t, rng.normal());
    t = ti;
    path.push_back(x);
  }
  return path;
}

Dataset synthesize(const SyntheticConfig& config) {
  config.validate();
  const std::size_t V = config.num_variables;
  std::vector<std::string> names;
  for (std::size_t v = 0; v < V; ++v) names.push_back("x" + std::to_string(v));

  Rng root(config.seed);
  std::vector<Observation> obs;
  std::map<std::string, int> labels;
  const int width = static_cast<int>(std::to_string(std::max<std::size_t>(config.num_episodes, 1) - 1).size());
  for (std::size_t e = 0; e < config.num_episodes; ++e) {
    Rng rng = root.fork();
    char id[32];
    std::snprintf(id, sizeof(id), "p%0*zu", std::max(width, 5), e);
    std::vector<double> features(3 * V, 0.0);
    for (std::size_t v = 0; v < V; ++v) {
      const double lambda = config.decay_rates[v];
      const double mu = config.means[v];
      const double sigma = config.noise_scales[v];
      const double rate = config.expected_observations[v] / config.horizon;
      std::vector<double> times;
      if (rate > 0.0) {
        for (double t = rng.exponential(rate); t <= config.horizon;
             t += rng.exponential(rate)) {
          double tt = t;
          if (config.time_resolution > 0.0) {
            tt = std::min(config.horizon,
                          std::round(t / config.time_resolution) * config.time_resolution);
          }
          times.push_back(tt);
        }
      }
      const auto path = sample_ou_path(times, mu, lambda, sigma, rng);
      const double sd = ou_stationary_sd(lambda, sigma);
      double sum = 0.0, last = 0.0;
      std::size_t kept = 0;
      for (std::size_t i = 0; i < times.size(); ++i) {
        if (rng.uniform() < config.missing_prob) continue;
        const double noise = config.measurement_noise[v];
        obs.push_back({id, times[i], v, noise > 0.0 ? path[i] + noise * rng.normal() : path[i]});
        const double z = sd > 0.0 ? (path[i] - mu) / sd : 0.0;
        sum += z;
        last = z;
        ++kept;
      }
      if (kept > 0) {
        features[v] = sum / static_cast<double>(kept);
        features[V + v] = last;
      }
      if (config.expected_observations[v] > 0.0)
        features[2 * V + v] = static_cast<double>(kept) / config.expected_observations[v];
    }
    std::vector<double> logits;
    for (std::size_t r = 0; r < config.label.weights.size(); ++r) {
      double z = config.label.bias[r];
      for (std::size_t k = 0; k < features.size(); ++k)
        z += config.label.weights[r][k] * features[k];
      logits.push_back(z);
    }
    int label;
    if (config.num_classes == 2) {
      const double p = 1.0 / (1.0 + std::exp(-logits[0]));
      label = config.label.deterministic ? (logits[0] > 0.0 ? 1 : 0)
                                         : (rng.uniform() < p ? 1 : 0);
    } else if (config.label.deterministic) {
      label = static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                               logits.begin());
    } else {
      const double mx = *std::max_element(logits.begin(), logits.end());
      double total = 0.0;
      for (double& z : logits) total += (z = std::exp(z - mx));
      double u = rng.uniform() * total;
      label = config.num_classes - 1;
      for (int c = 0; c < config.num_classes; ++c) {
        if (u < logits[c]) {
          label = c;
          break;
        }
        u -= logits[c];
      }
    }
    labels[id] = label;
  }
  return build_dataset(std::move(names), obs, labels, config.horizon,
                       config.num_classes);
}

}  // namespace dbgl::data
