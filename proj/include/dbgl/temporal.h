#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dbgl/nn.h"

namespace dbgl::temporal {

using diff::Tensor;

enum class DecayKind { kMlpExp, kFixedExp, kMlpGaussian, kMlpLinear };

// Config names: mlp_exp, exp, mlp_gaussian, mlp_linear.
DecayKind parse_decay_kind(std::string_view name);
std::string to_string(DecayKind kind);

struct DecayParams {
  DecayKind kind = DecayKind::kMlpExp;
  nn::Linear hidden;  // d -> d, ReLU
  nn::Linear out;     // d -> 1
  Tensor fixed_rate;  // [1] pre-softplus rate of the fixed kernel

  static DecayParams create(DecayKind kind, std::size_t d, Rng& rng);
  void append_to(nn::NamedParams& out) const;
};

// Non-negative rate per edge: softplus(MLP(e)) as [E,1], or the shared
// softplus(fixed_rate) as [1] for the fixed kernel.
Tensor decay_rate(const Tensor& edges, const DecayParams& p);

// Exponents of the exp and Gaussian kernels are capped here so the factor
// stays a positive normal double (about 1e-304) however large the interval.
inline constexpr double kMaxDecayExponent = 700.0;

// Kernel value for rates `lambda` ([E,1] or one element) and intervals
// `delta_t` [E,1]. Throws ContractError for a negative interval.
Tensor decay_factor(const Tensor& lambda, const Tensor& delta_t, DecayKind kind);

// Same kernel on plain numbers.
double decay_factor(double lambda, double delta_t, DecayKind kind);

// h scaled row-wise by gamma [E,1].
Tensor decay_state(const Tensor& h, const Tensor& gamma);

struct GateParams {
  nn::Linear gate;  // [e || h] 2d -> d

  static GateParams create(std::size_t d, Rng& rng);
  void append_to(nn::NamedParams& out) const;
};

// (1 - r) * h + r * e for a gate r in [0, 1].
Tensor blend(const Tensor& h, const Tensor& e, const Tensor& r);
Tensor gated_update(const Tensor& e, const Tensor& h, const GateParams& p);

struct AttentionParams {
  Tensor projection;  // [d, d]

  static AttentionParams create(std::size_t d, Rng& rng);
  void append_to(nn::NamedParams& out) const;
};

// Scaled dot-product attention of each patient [B,d] over its own V hidden
// states (rows p*V .. p*V+V-1 of `hidden`), projected. The attention weights
// [B,V] are written to `weights` when given.
Tensor node_specific_attention(const Tensor& patients, const Tensor& hidden,
                               const AttentionParams& p, Tensor* weights = nullptr);

}  // namespace dbgl::temporal
