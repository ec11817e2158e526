#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dbgl::metrics {

// Binary metrics take positive-class scores and 0/1 labels of equal length.

// Mann-Whitney: (concordant + 0.5 tied) / (n_pos n_neg). Throws
// UndefinedMetricError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Step-wise average precision: sum over descending unique thresholds of
// (recall_i - recall_{i-1}) * precision_i. Throws UndefinedMetricError
// without positives.
double auprc(std::span<const double> scores, std::span<const int> labels);

// Equal-width bins over [0, 1]; a score of exactly 1 goes in the last bin.
// Throws ConfigError for bins < 1.
double ece(std::span<const double> scores, std::span<const int> labels,
           std::size_t bins = 10);

double brier(std::span<const double> scores, std::span<const int> labels);

// Throws UndefinedMetricError without positives.
double mean_pos_prob(std::span<const double> scores, std::span<const int> labels);

struct BinaryReport {
  std::optional<double> auroc;  // empty when undefined for this sample
  std::optional<double> auprc;
  double ece = 0.0;
  double brier = 0.0;
  std::optional<double> mean_pos_prob;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

BinaryReport binary_report(std::span<const double> scores, std::span<const int> labels);

struct MulticlassReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::size_t> support;  // per class
};

// `predicted` and `labels` are class indices in [0, num_classes). Classes
// with no predictions (or no samples) contribute 0 precision (or recall).
MulticlassReport multiclass_report(std::span<const int> predicted,
                                   std::span<const int> labels, int num_classes);

}  // namespace dbgl::metrics
