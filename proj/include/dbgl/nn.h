#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dbgl/rng.h"
#include "dbgl/tensor.h"

namespace dbgl::nn {

using diff::Tensor;

// Affine map on row vectors: y = x W + b with W [in, out] and b [out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined for a bias-free map

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const;
};

// Weights uniform in [-1/sqrt(in), 1/sqrt(in)], biases zero.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
Tensor uniform_tensor(diff::Shape shape, double bound, Rng& rng);
Tensor normal_tensor(diff::Shape shape, double stddev, Rng& rng);

// Ordered (name, parameter) list. Tensors are shared handles, so entries
// alias the live parameters.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

void append_linear(NamedParams& out, const std::string& prefix, const Linear& l);

}  // namespace dbgl::nn
