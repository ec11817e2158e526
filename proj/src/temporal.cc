#include "dbgl/temporal.h"

#include <cmath>

#include "dbgl/errors.h"

namespace dbgl::temporal {

namespace d = diff;

DecayKind parse_decay_kind(std::string_view name) {
  if (name == "mlp_exp") return DecayKind::kMlpExp;
  if (name == "exp") return DecayKind::kFixedExp;
  if (name == "mlp_gaussian") return DecayKind::kMlpGaussian;
  if (name == "mlp_linear") return DecayKind::kMlpLinear;
  throw ConfigError("unknown decay kernel '" + std::string(name) +
                    "' (expected mlp_exp, exp, mlp_gaussian or mlp_linear)");
}

std::string to_string(DecayKind kind) {
  switch (kind) {
    case DecayKind::kMlpExp: return "mlp_exp";
    case DecayKind::kFixedExp: return "exp";
    case DecayKind::kMlpGaussian: return "mlp_gaussian";
    case DecayKind::kMlpLinear: return "mlp_linear";
  }
  return "mlp_exp";
}

DecayParams DecayParams::create(DecayKind kind, std::size_t d, Rng& rng) {
  DecayParams p;
  p.kind = kind;
  if (kind == DecayKind::kFixedExp) {
    p.fixed_rate = Tensor::zeros({1}, true);
  } else {
    p.hidden = nn::make_linear(d, d, rng);
    p.out = nn::make_linear(d, 1, rng);
  }
  return p;
}

void DecayParams::append_to(nn::NamedParams& out) const {
  if (kind == DecayKind::kFixedExp) {
    out.emplace_back("decay.fixed_rate", fixed_rate);
  } else {
    nn::append_linear(out, "decay.hidden", hidden);
    nn::append_linear(out, "decay.out", this->out);
  }
}

Tensor decay_rate(const Tensor& edges, const DecayParams& p) {
  if (p.kind == DecayKind::kFixedExp) return d::softplus(p.fixed_rate);
  return d::softplus(p.out(d::relu(p.hidden(edges))));
}

Tensor decay_factor(const Tensor& lambda, const Tensor& delta_t, DecayKind kind) {
  for (double v : delta_t.data())
    if (v < 0.0) throw ContractError("decay_factor: negative elapsed interval");
  const Tensor x = d::mul(delta_t, lambda);
  auto capped_decay = [](const Tensor& u) {
    return d::exp(d::scale(d::clamp_max(u, kMaxDecayExponent), -1.0));
  };
  switch (kind) {
    case DecayKind::kMlpExp:
    case DecayKind::kFixedExp:
      return capped_decay(x);
    case DecayKind::kMlpGaussian:
      return capped_decay(d::square(x));
    case DecayKind::kMlpLinear:
      return d::relu(d::add_scalar(d::scale(x, -1.0), 1.0));
  }
  throw ContractError("decay_factor: unknown kernel");
}

double decay_factor(double lambda, double delta_t, DecayKind kind) {
  if (delta_t < 0.0) throw ContractError("decay_factor: negative elapsed interval");
  const double x = lambda * delta_t;
  switch (kind) {
    case DecayKind::kMlpExp:
    case DecayKind::kFixedExp: return std::exp(-std::min(x, kMaxDecayExponent));
    case DecayKind::kMlpGaussian: return std::exp(-std::min(x * x, kMaxDecayExponent));
    case DecayKind::kMlpLinear: return std::max(1.0 - x, 0.0);
  }
  throw ContractError("decay_factor: unknown kernel");
}

Tensor decay_state(const Tensor& h, const Tensor& gamma) { return d::mul(h, gamma); }

GateParams GateParams::create(std::size_t d, Rng& rng) {
  return {nn::make_linear(2 * d, d, rng)};
}

void GateParams::append_to(nn::NamedParams& out) const {
  nn::append_linear(out, "gate", gate);
}

Tensor blend(const Tensor& h, const Tensor& e, const Tensor& r) {
  const Tensor keep = d::add_scalar(d::scale(r, -1.0), 1.0);
  return d::add(d::mul(keep, h), d::mul(r, e));
}

Tensor gated_update(const Tensor& e, const Tensor& h, const GateParams& p) {
  return blend(h, e, d::sigmoid(p.gate(d::concat({e, h}, 1))));
}

AttentionParams AttentionParams::create(std::size_t d, Rng& rng) {
  return {nn::make_linear(d, d, rng, false).weight};
}

void AttentionParams::append_to(nn::NamedParams& out) const {
  out.emplace_back("attention.projection", projection);
}

Tensor node_specific_attention(const Tensor& patients, const Tensor& hidden,
                               const AttentionParams& p, Tensor* weights) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(patients.dim(1)));
  const Tensor w = d::softmax(d::scale(d::group_dot(patients, hidden), inv_sqrt_d), 1);
  if (weights) *weights = w;
  return d::matmul(d::group_weighted_sum(w, hidden), p.projection);
}

}  // namespace dbgl::temporal
