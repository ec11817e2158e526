#pragma once

#include <span>
#include <vector>

#include "dbgl/nn.h"

namespace dbgl::codebook {

using diff::Tensor;

inline constexpr double kNormGuard = 1e-8;

struct FusionResult {
  Tensor fused;    // [N, d]
  Tensor weights;  // [N, K], rows sum to 1
};

// Per row g of [N,d]: w = softmax_k cos(g, c_k), q = sum_k w_k c_k and
// g' = g + (|q| / (|g| + 1e-8)) q.
FusionResult soft_fuse(const Tensor& g, const Tensor& codes);

class UtilizationAccumulator;

// Same fused rows as soft_fuse without materializing the [N, K] weights;
// what the model uses. Weight column sums go to `usage` when given.
Tensor soft_fuse_streaming(const Tensor& g, const Tensor& codes,
                           UtilizationAccumulator* usage = nullptr);

struct Retrieval {
  std::vector<std::size_t> index;  // best row per query, lowest on ties
  Tensor vectors;                  // gathered rows; gradient reaches `codes`
};

Retrieval retrieve(const Tensor& g, const Tensor& codes);

struct UtilizationReport {
  std::vector<double> mean_weight;  // per code entry
  double utilization = 0.0;         // fraction with mean weight > 1/K
};

// Streams fusion weight rows; each row must sum to 1 within 1e-6.
class UtilizationAccumulator {
 public:
  explicit UtilizationAccumulator(std::size_t codebook_size)
      : sums_(codebook_size, 0.0) {}

  void add(const Tensor& weights);
  // Column sums over `rows` weight rows that were not kept.
  void add_column_sums(std::span<const double> sums, std::size_t rows);
  std::size_t rows() const { return rows_; }
  std::span<const double> column_sums() const { return sums_; }
  UtilizationReport report() const;

 private:
  std::vector<double> sums_;
  std::size_t rows_ = 0;
};

UtilizationReport utilization(const Tensor& weights);

}  // namespace dbgl::codebook
