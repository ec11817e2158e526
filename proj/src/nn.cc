#include "dbgl/nn.h"

#include <cmath>

namespace dbgl::nn {

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = diff::matmul(x, weight);
  return bias.defined() ? diff::add(y, bias) : y;
}

Tensor uniform_tensor(diff::Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(diff::Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_data()) v = stddev * rng.normal();
  return t;
}

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

void append_linear(NamedParams& out, const std::string& prefix, const Linear& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  if (l.bias.defined()) out.emplace_back(prefix + ".bias", l.bias);
}

}  // namespace dbgl::nn
