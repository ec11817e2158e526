#include "dbgl/adam.h"

#include <cmath>

#include "dbgl/errors.h"

namespace dbgl::diff {

void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::int64_t step,
                 const AdamOptions& o) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size()) {
    throw DimensionError("adam: parameter of size " +
                         std::to_string(param.size()) + " with gradient " +
                         std::to_string(grad.size()) + " and moments " +
                         std::to_string(m.size()) + "/" + std::to_string(v.size()));
  }
  if (step < 1) throw ContractError("adam: step counter must start at 1");
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
    v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::span<const double> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adam_update(p.mutable_data(), g, m_[i], v_[i], step_, options_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace dbgl::diff
