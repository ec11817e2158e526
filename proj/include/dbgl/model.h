#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dbgl/codebook.h"
#include "dbgl/data.h"
#include "dbgl/graph.h"
#include "dbgl/metrics.h"
#include "dbgl/nn.h"
#include "dbgl/temporal.h"

namespace dbgl::model {

using diff::Tensor;

struct ModelConfig {
  std::size_t hidden_dim = 16;
  std::size_t codebook_size = 4096;
  std::size_t layers = 2;
  double learning_rate = 0.005;
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  std::size_t patience = 5;
  temporal::DecayKind kernel = temporal::DecayKind::kMlpExp;
  std::uint64_t seed = 0;
  int num_classes = 2;

  // Throws ConfigError on a non-positive field.
  void validate() const;
};

struct AblationFlags {
  bool use_tde = true;  // decay of the hidden state before the gate
  bool use_sna = true;  // patient attention over hidden states
  bool use_hvs = true;  // hidden states in the classifier input
  bool use_cb = true;   // codebook fusion (also required for retrieval)
  bool use_mcv = true;  // retrieved code vector in the classifier input
  bool use_te = true;   // time embedding in edge features

  // Turns off one component by its short name (tde, sna, hvs, cb, mcv, te).
  void disable(std::string_view name);
  // Flags as they act: retrieval needs the codebook.
  AblationFlags effective() const;
  std::vector<std::string> disabled() const;
  bool operator==(const AblationFlags&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);

using Batch = std::span<const data::Episode* const>;

struct ForwardResult {
  Tensor logits;    // [B, C]
  Tensor patients;  // final patient embeddings [B, d]
  Tensor hidden;    // hidden bank [B*V, d] before reweighting
  std::size_t fused_steps = 0;
  codebook::UtilizationAccumulator fusion_usage{0};  // weights of every fused step
  std::vector<std::size_t> retrieved;  // code index per patient when used
  std::size_t active_steps = 0;
};

class Model {
 public:
  Model(const ModelConfig& config, const AblationFlags& flags, std::size_t num_variables);

  const ModelConfig& config() const { return config_; }
  const AblationFlags& flags() const { return flags_; }
  std::size_t num_variables() const { return num_variables_; }
  std::size_t head_input_dim() const;

  // Every parameter block in a fixed order, including blocks that the
  // current flags leave unused.
  nn::NamedParams parameters() const;
  std::vector<Tensor> parameter_tensors() const;
  std::size_t parameter_count() const;

  // Independent copy of all parameter values.
  Model clone() const;
  void copy_values_from(const Model& other);

  ForwardResult forward(Batch batch) const;

  // Raw access for tests and tools.
  Tensor variable_states;  // [V, d]
  graph::EdgeEmbeddingParams edge_init;
  std::vector<graph::EdgeSageLayer> layers;
  temporal::DecayParams decay;
  temporal::GateParams gate;
  temporal::AttentionParams attention;
  nn::Linear fusion;  // [v_p || v_n] 2d -> d, no bias
  Tensor codes;       // [K, d]
  nn::Linear head_hidden;
  nn::Linear head_out;

 private:
  ModelConfig config_;
  AblationFlags flags_;
  std::size_t num_variables_;
};

// h + h * softmax over variables of the per-patient observation counts,
// flattened to [B, V*d]. `counts` is [B*V] in pair-row order.
Tensor head_reweight(const Tensor& hidden, std::span<const double> counts,
                     std::size_t batch_size, std::size_t num_variables);

// Per (patient, variable) observation counts over all steps, [B*V].
std::vector<double> observation_counts(Batch batch);

Tensor loss(const Tensor& logits, std::span<const int> labels);
std::vector<int> labels_of(Batch batch);

// --- Evaluation -------------------------------------------------------------

struct Predictions {
  std::vector<double> probabilities;  // [N, C] row-major
  std::vector<int> labels;
  int num_classes = 2;
  double loss = 0.0;
  std::optional<codebook::UtilizationReport> utilization;

  std::vector<double> positive_scores() const;
  std::vector<int> predicted_classes() const;
};

Predictions predict(const Model& model, const data::Dataset& ds,
                    std::size_t batch_size = 256);

struct EvalReport {
  std::size_t num_samples = 0;
  double loss = 0.0;
  std::optional<metrics::BinaryReport> binary;
  std::optional<metrics::MulticlassReport> multiclass;
  std::optional<double> codebook_utilization;
};

EvalReport evaluate(const Model& model, const data::Dataset& ds,
                    std::size_t batch_size = 256);

// Value used for model selection: AUPRC for binary tasks (negative loss when
// the split has no positives), accuracy for C > 2.
double monitor_value(const EvalReport& report);

void to_json(nlohmann::json& j, const EvalReport& r);

// --- Training ---------------------------------------------------------------

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Records one epoch's monitored value (higher is better); returns true when
  // it improves on the best so far.
  bool update(double value);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any
  double best_value() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_ = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean batch loss during the epoch
  EvalReport val;
  double monitor = 0.0;
  bool improved = false;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainOptions {
  // Called after every epoch with the current (not the best) model; return
  // true to stop training.
  std::function<bool(const EpochRecord&, const Model&)> on_epoch;
};

struct TrainResult {
  Model model;  // best snapshot
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Adam over shuffled mini-batches; throws ConfigError on an empty split.
TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set,
                  const ModelConfig& config, const AblationFlags& flags,
                  const TrainOptions& options = {});

}  // namespace dbgl::model
