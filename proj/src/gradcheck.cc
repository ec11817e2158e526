#include "dbgl/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace dbgl::model {

namespace d = diff;

namespace {

double batch_loss(const Model& model, Batch batch, const std::vector<int>& labels) {
  return loss(model.forward(batch).logits, labels).item();
}

}  // namespace

std::optional<double> numeric_derivative(const std::function<double()>& loss_fn,
                                         double& x, const GradcheckOptions& options) {
  const double saved = x;
  d::reset_branch_signature();
  loss_fn();
  const std::uint64_t base = d::branch_signature();
  auto at = [&](double offset, bool& smooth) {
    x = saved + offset;
    d::reset_branch_signature();
    const double v = loss_fn();
    smooth = smooth && d::branch_signature() == base;
    return v;
  };
  for (double h = options.step; h >= options.min_step; h /= 10.0) {
    bool smooth = true;
    const double p1 = at(h, smooth), m1 = at(-h, smooth);
    const double p2 = at(2.0 * h, smooth), m2 = at(-2.0 * h, smooth);
    x = saved;
    if (smooth) return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
  }
  x = saved;
  return std::nullopt;
}

GradcheckResult gradcheck(const Model& model, Batch batch, const GradcheckOptions& options) {
  const std::vector<int> labels = labels_of(batch);
  const nn::NamedParams params = model.parameters();
  for (auto& [name, t] : params) Tensor(t).zero_grad();
  {
    d::Tape tape;
    tape.backward(loss(model.forward(batch).logits, labels));
  }

  GradcheckResult result;
  result.passed = true;
  for (const auto& [name, tensor] : params) {
    Tensor t = tensor;
    BlockCheck block{name, t.numel(), 0, 0, 0.0, 0.0};
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::ranges::copy(t.grad(), analytic.begin());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::optional<double> estimate = numeric_derivative(
          [&] { return batch_loss(model, batch, labels); }, data[i], options);
      if (!estimate) {
        ++block.on_kink;
        continue;
      }
      const double numeric = *estimate;
      const double a = analytic[i];
      block.max_abs_grad = std::max(block.max_abs_grad, std::abs(a));
      if (std::abs(a) < options.skip_below && std::abs(numeric) < options.skip_below) continue;
      const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
      block.max_rel_err = std::max(block.max_rel_err, rel);
      ++block.checked;
    }
    result.max_rel_err = std::max(result.max_rel_err, block.max_rel_err);
    if (block.max_rel_err >= options.tolerance) result.passed = false;
    result.blocks.push_back(block);
  }
  return result;
}

data::Dataset gradcheck_fixture(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t B = 2, V = 3, T = 4;
  std::vector<data::Observation> obs;
  std::map<std::string, int> labels;
  for (std::size_t p = 0; p < B; ++p) {
    const std::string id = "g" + std::to_string(p);
    labels[id] = static_cast<int>(p % 2);
    double t = 0.0;
    for (std::size_t s = 0; s < T; ++s) {
      t += rng.uniform(0.5, 6.0);
      // Variable s % V is always present so every step exists; the others
      // appear at random.
      for (std::size_t n = 0; n < V; ++n)
        if (n == s % V || rng.uniform() < 0.5) obs.push_back({id, t, n, rng.normal()});
    }
  }
  return data::build_dataset({"a", "b", "c"}, obs, labels, 48.0, 2);
}

Model gradcheck_model(std::uint64_t seed, temporal::DecayKind kernel,
                      const AblationFlags& flags) {
  ModelConfig cfg;
  cfg.hidden_dim = 8;
  cfg.codebook_size = 8;
  cfg.layers = 2;
  cfg.kernel = kernel;
  cfg.seed = seed;
  Model m(cfg, flags, 3);
  Rng rng(seed ^ 0xB1A5ULL);
  for (auto& [name, t] : m.parameters()) {
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (!is_bias && name != "edge_init.time_phase") continue;
    Tensor b = t;
    for (double& v : b.mutable_data()) v = rng.uniform(-0.5, 0.5);
  }
  return m;
}

}  // namespace dbgl::model
