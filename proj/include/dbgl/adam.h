#pragma once

#include <cstdint>
#include <vector>

#include "dbgl/tensor.h"

namespace dbgl::diff {

struct AdamOptions {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Parameters without an accumulated gradient are
// treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step();
  void zero_grad();

  std::int64_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

// One Adam update of `param` from an explicit gradient and moment buffers.
void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v, std::int64_t step,
                 const AdamOptions& options);

}  // namespace dbgl::diff
