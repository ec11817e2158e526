#include "dbgl/codebook.h"

#include <cmath>

#include "dbgl/errors.h"

namespace dbgl::codebook {

namespace d = diff;

FusionResult soft_fuse(const Tensor& g, const Tensor& codes) {
  if (g.rank() != 2 || codes.rank() != 2 || g.dim(1) != codes.dim(1))
    throw DimensionError("soft_fuse: queries " + d::shape_string(g.shape()) +
                         " do not match codebook " + d::shape_string(codes.shape()));
  const Tensor sim = d::matmul_nt(d::normalize_rows(g), d::normalize_rows(codes));
  Tensor w = d::softmax(sim, 1);
  const Tensor q = d::matmul(w, codes);
  const Tensor alpha =
      d::div(d::l2_norm(q, 1), d::add_scalar(d::l2_norm(g, 1), kNormGuard));
  return {d::add(g, d::mul(q, alpha)), std::move(w)};
}

Tensor soft_fuse_streaming(const Tensor& g, const Tensor& codes,
                           UtilizationAccumulator* usage) {
  if (g.rank() != 2 || codes.rank() != 2 || g.dim(1) != codes.dim(1))
    throw DimensionError("soft_fuse: queries " + d::shape_string(g.shape()) +
                         " do not match codebook " + d::shape_string(codes.shape()));
  std::vector<double> sums;
  const Tensor q = d::attend_rows(d::normalize_rows(g), d::normalize_rows(codes), codes,
                                  usage ? &sums : nullptr);
  if (usage) usage->add_column_sums(sums, g.dim(0));
  const Tensor alpha =
      d::div(d::l2_norm(q, 1), d::add_scalar(d::l2_norm(g, 1), kNormGuard));
  return d::add(g, d::mul(q, alpha));
}

Retrieval retrieve(const Tensor& g, const Tensor& codes) {
  if (g.rank() != 2 || codes.rank() != 2 || g.dim(1) != codes.dim(1))
    throw DimensionError("retrieve: queries " + d::shape_string(g.shape()) +
                         " do not match codebook " + d::shape_string(codes.shape()));
  const std::size_t n = g.dim(0), k = codes.dim(0), dim = g.dim(1);
  const auto gd = g.data();
  const auto cd = codes.data();
  std::vector<double> code_norm(k);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) s += cd[j * dim + c] * cd[j * dim + c];
    code_norm[j] = std::sqrt(s);
  }
  Retrieval r;
  r.index.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double gnorm = 0.0;
    for (std::size_t c = 0; c < dim; ++c) gnorm += gd[i * dim + c] * gd[i * dim + c];
    gnorm = std::sqrt(gnorm);
    std::size_t best = 0;
    double best_sim = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += gd[i * dim + c] * cd[j * dim + c];
      const double sim = dot / ((gnorm + d::kCosineEps) * (code_norm[j] + d::kCosineEps));
      if (sim > best_sim) {
        best_sim = sim;
        best = j;
      }
    }
    r.index[i] = best;
    d::mix_branch_signature(best);
  }
  r.vectors = d::gather_rows(codes, r.index);
  return r;
}

void UtilizationAccumulator::add(const Tensor& weights) {
  const std::size_t k = sums_.size();
  if (weights.rank() != 2 || weights.dim(1) != k)
    throw DimensionError("utilization: weights " + d::shape_string(weights.shape()) +
                         " do not have " + std::to_string(k) + " columns");
  const auto w = weights.data();
  for (std::size_t i = 0; i < weights.dim(0); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += w[i * k + j];
    if (std::abs(row - 1.0) > 1e-6)
      throw ContractError("utilization: weight row " + std::to_string(i) +
                          " sums to " + std::to_string(row));
    for (std::size_t j = 0; j < k; ++j) sums_[j] += w[i * k + j];
  }
  rows_ += weights.dim(0);
}

void UtilizationAccumulator::add_column_sums(std::span<const double> sums, std::size_t rows) {
  if (sums.size() != sums_.size())
    throw DimensionError("utilization: " + std::to_string(sums.size()) +
                         " column sums for a codebook of " + std::to_string(sums_.size()));
  for (std::size_t j = 0; j < sums.size(); ++j) sums_[j] += sums[j];
  rows_ += rows;
}

UtilizationReport UtilizationAccumulator::report() const {
  UtilizationReport r;
  const std::size_t k = sums_.size();
  r.mean_weight.assign(k, 0.0);
  if (rows_ == 0 || k == 0) return r;
  std::size_t above = 0;
  for (std::size_t j = 0; j < k; ++j) {
    r.mean_weight[j] = sums_[j] / static_cast<double>(rows_);
    if (r.mean_weight[j] > 1.0 / static_cast<double>(k)) ++above;
  }
  r.utilization = static_cast<double>(above) / static_cast<double>(k);
  return r;
}

UtilizationReport utilization(const Tensor& weights) {
  UtilizationAccumulator acc(weights.dim(1));
  acc.add(weights);
  return acc.report();
}

}  // namespace dbgl::codebook
