#include "dbgl/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dbgl/errors.h"

namespace dbgl::metrics {
namespace {

void check_lengths(std::span<const double> scores, std::span<const int> labels,
                   const char* name) {
  if (scores.size() != labels.size())
    throw DimensionError(std::string(name) + ": " + std::to_string(scores.size()) +
                         " scores but " + std::to_string(labels.size()) + " labels");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ValidationError(std::string(name) + ": label " + std::to_string(i) +
                            " is not 0/1");
    if (!std::isfinite(scores[i]))
      throw ValidationError(std::string(name) + ": score " + std::to_string(i) +
                            " is not finite");
  }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "auroc");
  const std::size_t n_pos = std::count(labels.begin(), labels.end(), 1);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("auroc needs both positive and negative samples");
  // Walk ascending tie groups; each positive beats every negative seen below
  // its group and ties with the negatives inside it.
  std::vector<std::size_t> order = descending_order(scores);
  std::reverse(order.begin(), order.end());
  double credit2 = 0.0;  // twice the concordance count, kept integral
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg)++;
      ++j;
    }
    credit2 += static_cast<double>(pos) * (2.0 * neg_below + neg);
    neg_below += neg;
    i = j;
  }
  return credit2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "auprc");
  const std::size_t n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos == 0) throw UndefinedMetricError("auprc needs at least one positive sample");
  const std::vector<std::size_t> order = descending_order(scores);
  double area = 0.0;
  std::size_t tp = 0, seen = 0, prev_tp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]];
      ++j;
    }
    seen = j;
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += static_cast<double>(tp - prev_tp) / static_cast<double>(n_pos) * precision;
    prev_tp = tp;
    i = j;
  }
  return area;
}

double ece(std::span<const double> scores, std::span<const int> labels, std::size_t bins) {
  if (bins < 1) throw ConfigError("ece needs at least one bin");
  check_lengths(scores, labels, "ece");
  if (scores.empty()) return 0.0;
  std::vector<double> conf(bins, 0.0), hits(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < 0.0 || scores[i] > 1.0)
      throw ValidationError("ece: score " + std::to_string(i) + " outside [0, 1]");
    const std::size_t b =
        std::min(bins - 1, static_cast<std::size_t>(scores[i] * static_cast<double>(bins)));
    conf[b] += scores[i];
    hits[b] += labels[i];
    ++count[b];
  }
  double total = 0.0;
  const double n = static_cast<double>(scores.size());
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += nb / n * std::abs(hits[b] / nb - conf[b] / nb);
  }
  return total;
}

double brier(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "brier");
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = scores[i] - labels[i];
    s += e * e;
  }
  return s / static_cast<double>(scores.size());
}

double mean_pos_prob(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "mean_pos_prob");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == 1) {
      s += scores[i];
      ++n;
    }
  if (n == 0) throw UndefinedMetricError("mean_pos_prob needs at least one positive sample");
  return s / static_cast<double>(n);
}

BinaryReport binary_report(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores, labels, "binary_report");
  BinaryReport r;
  r.n_pos = std::count(labels.begin(), labels.end(), 1);
  r.n_neg = labels.size() - r.n_pos;
  if (r.n_pos > 0 && r.n_neg > 0) r.auroc = auroc(scores, labels);
  if (r.n_pos > 0) {
    r.auprc = auprc(scores, labels);
    r.mean_pos_prob = mean_pos_prob(scores, labels);
  }
  r.ece = ece(scores, labels);
  r.brier = brier(scores, labels);
  return r;
}

MulticlassReport multiclass_report(std::span<const int> predicted,
                                   std::span<const int> labels, int num_classes) {
  if (predicted.size() != labels.size())
    throw DimensionError("multiclass_report: prediction and label counts differ");
  if (num_classes < 2) throw ConfigError("multiclass_report needs at least two classes");
  const auto C = static_cast<std::size_t>(num_classes);
  std::vector<std::size_t> tp(C, 0), pred_count(C, 0);
  MulticlassReport r;
  r.support.assign(C, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes)
      throw ValidationError("multiclass_report: class index out of range at " +
                            std::to_string(i));
    ++r.support[labels[i]];
    ++pred_count[predicted[i]];
    if (predicted[i] == labels[i]) {
      ++tp[labels[i]];
      ++correct;
    }
  }
  if (!labels.empty()) r.accuracy = static_cast<double>(correct) / labels.size();
  for (std::size_t c = 0; c < C; ++c) {
    const double p = pred_count[c] ? static_cast<double>(tp[c]) / pred_count[c] : 0.0;
    const double rec = r.support[c] ? static_cast<double>(tp[c]) / r.support[c] : 0.0;
    r.macro_precision += p / C;
    r.macro_recall += rec / C;
    r.macro_f1 += (p + rec > 0.0 ? 2.0 * p * rec / (p + rec) : 0.0) / C;
  }
  return r;
}

}  // namespace dbgl::metrics
