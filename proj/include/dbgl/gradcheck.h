#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dbgl/data.h"
#include "dbgl/model.h"

namespace dbgl::model {

struct GradcheckOptions {
  // Fourth-order central differences with half width `step`. When the
  // stencil crosses a kink (any ReLU changes sign or a retrieval changes
  // index) the width shrinks tenfold, down to `min_step`.
  double step = 1e-3;
  double min_step = 1e-9;
  double tolerance = 1e-4;   // max relative error per coordinate
  double skip_below = 1e-8;  // skip when both gradients are smaller
};

struct BlockCheck {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  std::size_t on_kink = 0;  // no smooth stencil found; not compared
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckResult {
  std::vector<BlockCheck> blocks;
  double max_rel_err = 0.0;
  bool passed = false;
};

// Derivative of `loss_fn` with respect to `x` (perturbed in place and
// restored); empty when every stencil down to `min_step` crosses a kink.
std::optional<double> numeric_derivative(const std::function<double()>& loss_fn,
                                         double& x, const GradcheckOptions& options);

// Compares the analytic gradient of the mean cross-entropy on `batch` with
// central differences for every coordinate of every parameter block.
GradcheckResult gradcheck(const Model& model, Batch batch,
                          const GradcheckOptions& options = {});

// The small fixture used by the command-line check: B=2 episodes of T=4 steps
// over V=3 variables with heterogeneous intervals.
data::Dataset gradcheck_fixture(std::uint64_t seed);

// Model at d=8, K=8, L=2 for the fixture; biases are drawn away from zero so
// that no activation sits on a kink.
Model gradcheck_model(std::uint64_t seed, temporal::DecayKind kernel,
                      const AblationFlags& flags = {});

}  // namespace dbgl::model
