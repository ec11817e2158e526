#include "dbgl/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbgl/adam.h"
#include "dbgl/errors.h"

namespace dbgl::model {

namespace d = diff;

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(hidden_dim, "hidden_dim");
  positive(codebook_size, "codebook_size");
  positive(layers, "layers");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  positive(patience, "patience");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

void AblationFlags::disable(std::string_view name) {
  if (name == "tde") use_tde = false;
  else if (name == "sna") use_sna = false;
  else if (name == "hvs") use_hvs = false;
  else if (name == "cb") use_cb = false;
  else if (name == "mcv") use_mcv = false;
  else if (name == "te") use_te = false;
  else
    throw ConfigError("unknown ablation '" + std::string(name) +
                      "' (expected tde, sna, hvs, cb, mcv or te)");
}

AblationFlags AblationFlags::effective() const {
  AblationFlags f = *this;
  if (!f.use_cb) f.use_mcv = false;
  return f;
}

std::vector<std::string> AblationFlags::disabled() const {
  std::vector<std::string> out;
  if (!use_tde) out.push_back("tde");
  if (!use_sna) out.push_back("sna");
  if (!use_hvs) out.push_back("hvs");
  if (!use_cb) out.push_back("cb");
  if (!use_mcv) out.push_back("mcv");
  if (!use_te) out.push_back("te");
  return out;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"hidden_dim", c.hidden_dim},   {"codebook_size", c.codebook_size},
       {"layers", c.layers},           {"lr", c.learning_rate},
       {"batch_size", c.batch_size},   {"epochs", c.epochs},
       {"patience", c.patience},       {"decay_kernel", temporal::to_string(c.kernel)},
       {"seed", c.seed},               {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig def;
  c.hidden_dim = j.value("hidden_dim", def.hidden_dim);
  c.codebook_size = j.value("codebook_size", def.codebook_size);
  c.layers = j.value("layers", def.layers);
  c.learning_rate = j.value("lr", def.learning_rate);
  c.batch_size = j.value("batch_size", def.batch_size);
  c.epochs = j.value("epochs", def.epochs);
  c.patience = j.value("patience", def.patience);
  c.kernel = temporal::parse_decay_kind(
      j.value("decay_kernel", temporal::to_string(def.kernel)));
  c.seed = j.value("seed", def.seed);
  c.num_classes = j.value("num_classes", def.num_classes);
}

void to_json(nlohmann::json& j, const AblationFlags& f) {
  j = {{"use_tde", f.use_tde}, {"use_sna", f.use_sna}, {"use_hvs", f.use_hvs},
       {"use_cb", f.use_cb},   {"use_mcv", f.use_mcv}, {"use_te", f.use_te}};
}

void from_json(const nlohmann::json& j, AblationFlags& f) {
  f.use_tde = j.value("use_tde", true);
  f.use_sna = j.value("use_sna", true);
  f.use_hvs = j.value("use_hvs", true);
  f.use_cb = j.value("use_cb", true);
  f.use_mcv = j.value("use_mcv", true);
  f.use_te = j.value("use_te", true);
}

// --- Model ------------------------------------------------------------------

Model::Model(const ModelConfig& config, const AblationFlags& flags,
             std::size_t num_variables)
    : config_(config), flags_(flags.effective()), num_variables_(num_variables) {
  config_.validate();
  if (num_variables == 0) throw ConfigError("model needs at least one variable");
  const std::size_t dim = config_.hidden_dim;
  Rng rng(config_.seed);
  variable_states = nn::uniform_tensor({num_variables, dim}, 1.0 / std::sqrt(double(dim)), rng);
  edge_init = graph::EdgeEmbeddingParams::create(num_variables, dim, rng);
  for (std::size_t l = 0; l < config_.layers; ++l)
    layers.push_back(graph::EdgeSageLayer::create(dim, rng));
  decay = temporal::DecayParams::create(config_.kernel, dim, rng);
  gate = temporal::GateParams::create(dim, rng);
  attention = temporal::AttentionParams::create(dim, rng);
  fusion = nn::make_linear(2 * dim, dim, rng, false);
  codes = nn::normal_tensor({config_.codebook_size, dim}, 1.0 / std::sqrt(double(dim)), rng);
  head_hidden = nn::make_linear(head_input_dim(), 2 * dim, rng);
  head_out = nn::make_linear(2 * dim, static_cast<std::size_t>(config_.num_classes), rng);
}

std::size_t Model::head_input_dim() const {
  const std::size_t dim = config_.hidden_dim;
  return dim + (flags_.use_mcv ? dim : 0) + (flags_.use_hvs ? num_variables_ * dim : 0);
}

nn::NamedParams Model::parameters() const {
  nn::NamedParams out;
  out.emplace_back("variable_states", variable_states);
  edge_init.append_to(out);
  for (std::size_t l = 0; l < layers.size(); ++l)
    layers[l].append_to(out, "layer" + std::to_string(l));
  decay.append_to(out);
  gate.append_to(out);
  attention.append_to(out);
  nn::append_linear(out, "fusion", fusion);
  out.emplace_back("codebook", codes);
  nn::append_linear(out, "head.hidden", head_hidden);
  nn::append_linear(out, "head.out", head_out);
  return out;
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : parameters()) n += t.numel();
  return n;
}

void Model::copy_values_from(const Model& other) {
  const auto dst = parameters();
  const auto src = other.parameters();
  if (dst.size() != src.size())
    throw CompatibilityError("models have different parameter layouts");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].second.shape() != src[i].second.shape())
      throw CompatibilityError("parameter " + dst[i].first + " has shape " +
                               d::shape_string(dst[i].second.shape()) + ", source has " +
                               d::shape_string(src[i].second.shape()));
    Tensor t = dst[i].second;
    std::ranges::copy(src[i].second.data(), t.mutable_data().begin());
  }
}

Model Model::clone() const {
  Model m(config_, flags_, num_variables_);
  m.copy_values_from(*this);
  return m;
}

ForwardResult Model::forward(Batch batch) const {
  if (batch.empty()) throw ConfigError("forward: empty batch");
  const std::size_t B = batch.size();
  const std::size_t V = num_variables_;
  const std::size_t dim = config_.hidden_dim;
  std::size_t T = 0;
  for (const data::Episode* ep : batch) {
    if (ep->num_variables != V)
      throw ConfigError("forward: episode " + ep->patient_id + " has " +
                        std::to_string(ep->num_variables) + " variables, model expects " +
                        std::to_string(V));
    T = std::max(T, ep->steps());
  }

  std::vector<std::size_t> pair_patient(B * V), pair_variable(B * V);
  for (std::size_t p = 0; p < B; ++p)
    for (std::size_t n = 0; n < V; ++n) {
      pair_patient[p * V + n] = p;
      pair_variable[p * V + n] = n;
    }

  ForwardResult out;
  out.fusion_usage = codebook::UtilizationAccumulator(config_.codebook_size);
  graph::NodeStates states = graph::init_node_states(B, variable_states);
  Tensor hidden = Tensor::zeros({B * V, dim});
  for (std::size_t t = 0; t < T; ++t) {
    const graph::GraphStep step = graph::build_graph_step(batch, t);
    if (step.empty()) continue;
    if (out.active_steps > 0 && flags_.use_cb) {
      const Tensor pairs = fusion(d::concat({d::gather_rows(states.patients, pair_patient),
                                             d::gather_rows(states.variables, pair_variable)},
                                            1));
      const Tensor fused = codebook::soft_fuse_streaming(pairs, codes, &out.fusion_usage);
      states.patients = d::scale(d::index_add_rows(fused, pair_patient, B), 1.0 / V);
      states.variables = d::scale(d::index_add_rows(fused, pair_variable, V), 1.0 / B);
      ++out.fused_steps;
    }
    if (out.active_steps > 0 && flags_.use_sna)
      states.patients = temporal::node_specific_attention(states.patients, hidden, attention);

    const Tensor e0 = graph::init_edge_embeddings(step, edge_init, flags_.use_te);
    graph::LayerOutput passed = graph::message_pass(step, states, e0, layers);
    states = passed.states;
    const Tensor& e = passed.edges;

    const std::vector<std::size_t> rows = step.pair_rows();
    Tensor previous = d::gather_rows(hidden, rows);
    if (flags_.use_tde) {
      const Tensor dt = Tensor::from_data({step.num_edges(), 1}, step.delta_t);
      const Tensor gamma =
          temporal::decay_factor(temporal::decay_rate(e, decay), dt, decay.kind);
      previous = temporal::decay_state(previous, gamma);
    }
    hidden = d::scatter_rows(hidden, rows, temporal::gated_update(e, previous, gate));
    ++out.active_steps;
  }

  out.patients = states.patients;
  out.hidden = hidden;
  std::vector<Tensor> parts{states.patients};
  if (flags_.use_mcv) {
    codebook::Retrieval r = codebook::retrieve(states.patients, codes);
    parts.push_back(r.vectors);
    out.retrieved = std::move(r.index);
  }
  if (flags_.use_hvs) parts.push_back(head_reweight(hidden, observation_counts(batch), B, V));
  const Tensor z = parts.size() == 1 ? parts[0] : d::concat(parts, 1);
  out.logits = head_out(d::relu(head_hidden(z)));
  return out;
}

Tensor head_reweight(const Tensor& hidden, std::span<const double> counts,
                     std::size_t batch_size, std::size_t num_variables) {
  if (counts.size() != batch_size * num_variables ||
      hidden.dim(0) != batch_size * num_variables)
    throw DimensionError("head_reweight: bank and counts disagree with B x V");
  const Tensor w = d::softmax(
      Tensor::from_data({batch_size, num_variables}, {counts.begin(), counts.end()}), 1);
  std::vector<double> factor(w.data().begin(), w.data().end());
  for (double& f : factor) f += 1.0;
  const Tensor scaled =
      d::mul(hidden, Tensor::from_data({batch_size * num_variables, 1}, factor));
  return d::reshape(scaled, {batch_size, num_variables * hidden.dim(1)});
}

std::vector<double> observation_counts(Batch batch) {
  const std::size_t V = batch.empty() ? 0 : batch[0]->num_variables;
  std::vector<double> counts(batch.size() * V, 0.0);
  for (std::size_t p = 0; p < batch.size(); ++p)
    for (std::size_t s = 0; s < batch[p]->steps(); ++s)
      for (std::size_t n = 0; n < V; ++n) counts[p * V + n] += batch[p]->observed(s, n);
  return counts;
}

Tensor loss(const Tensor& logits, std::span<const int> labels) {
  return d::cross_entropy(logits, labels);
}

std::vector<int> labels_of(Batch batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const data::Episode* ep : batch) labels.push_back(ep->label);
  return labels;
}

// --- Evaluation -------------------------------------------------------------

namespace {

std::vector<const data::Episode*> pointers(const data::Dataset& ds) {
  std::vector<const data::Episode*> out;
  out.reserve(ds.size());
  for (const auto& ep : ds.episodes) out.push_back(&ep);
  return out;
}

}  // namespace

std::vector<double> Predictions::positive_scores() const {
  std::vector<double> out;
  const auto C = static_cast<std::size_t>(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back(probabilities[i * C + 1]);
  return out;
}

std::vector<int> Predictions::predicted_classes() const {
  std::vector<int> out;
  const auto C = static_cast<std::size_t>(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probabilities.begin() + static_cast<std::ptrdiff_t>(i * C);
    out.push_back(static_cast<int>(std::max_element(row, row + C) - row));
  }
  return out;
}

Predictions predict(const Model& model, const data::Dataset& ds, std::size_t batch_size) {
  Predictions pred;
  pred.num_classes = model.config().num_classes;
  if (ds.num_variables() != model.num_variables())
    throw CompatibilityError("dataset has " + std::to_string(ds.num_variables()) +
                             " variables, model expects " +
                             std::to_string(model.num_variables()));
  if (ds.num_classes != model.config().num_classes)
    throw CompatibilityError("dataset has " + std::to_string(ds.num_classes) +
                             " classes, model expects " +
                             std::to_string(model.config().num_classes));
  const auto eps = pointers(ds);
  codebook::UtilizationAccumulator util(model.config().codebook_size);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < eps.size(); start += batch_size) {
    const std::size_t end = std::min(eps.size(), start + batch_size);
    const Batch batch(eps.data() + start, end - start);
    const ForwardResult fr = model.forward(batch);
    const std::vector<int> labels = labels_of(batch);
    loss_sum += loss(fr.logits, labels).item() * static_cast<double>(labels.size());
    const Tensor probs = d::softmax(fr.logits, 1);
    pred.probabilities.insert(pred.probabilities.end(), probs.data().begin(),
                              probs.data().end());
    pred.labels.insert(pred.labels.end(), labels.begin(), labels.end());
    if (fr.fusion_usage.rows() > 0)
      util.add_column_sums(fr.fusion_usage.column_sums(), fr.fusion_usage.rows());
  }
  if (!eps.empty()) pred.loss = loss_sum / static_cast<double>(eps.size());
  if (util.rows() > 0) pred.utilization = util.report();
  return pred;
}

EvalReport evaluate(const Model& model, const data::Dataset& ds, std::size_t batch_size) {
  const Predictions pred = predict(model, ds, batch_size);
  EvalReport r;
  r.num_samples = pred.labels.size();
  r.loss = pred.loss;
  if (pred.utilization) r.codebook_utilization = pred.utilization->utilization;
  if (r.num_samples == 0) return r;
  if (pred.num_classes == 2)
    r.binary = metrics::binary_report(pred.positive_scores(), pred.labels);
  else
    r.multiclass =
        metrics::multiclass_report(pred.predicted_classes(), pred.labels, pred.num_classes);
  return r;
}

double monitor_value(const EvalReport& report) {
  if (report.multiclass) return report.multiclass->accuracy;
  if (report.binary && report.binary->auprc) return *report.binary->auprc;
  return -report.loss;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"num_samples", r.num_samples}, {"loss", r.loss},
       {"codebook_utilization", optional_json(r.codebook_utilization)}};
  if (r.binary) {
    const auto& b = *r.binary;
    j["auroc"] = optional_json(b.auroc);
    j["auprc"] = optional_json(b.auprc);
    j["ece"] = b.ece;
    j["brier"] = b.brier;
    j["mean_pos_prob"] = optional_json(b.mean_pos_prob);
    j["n_pos"] = b.n_pos;
    j["n_neg"] = b.n_neg;
  }
  if (r.multiclass) {
    const auto& m = *r.multiclass;
    j["accuracy"] = m.accuracy;
    j["macro_precision"] = m.macro_precision;
    j["macro_recall"] = m.macro_recall;
    j["macro_f1"] = m.macro_f1;
    j["support"] = m.support;
  }
}

// --- Training ---------------------------------------------------------------

bool EarlyStopper::update(double value) {
  ++epoch_;
  if (best_epoch_ == 0 || value > best_) {
    best_ = value;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"train_loss", r.train_loss},
       {"val", r.val},
       {"monitor", r.monitor},
       {"improved", r.improved}};
}

TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set,
                  const ModelConfig& config, const AblationFlags& flags,
                  const TrainOptions& options) {
  if (train_set.size() == 0) throw ConfigError("training split is empty");
  if (val_set.size() == 0) throw ConfigError("validation split is empty");
  if (train_set.num_classes != config.num_classes)
    throw ConfigError("training data has " + std::to_string(train_set.num_classes) +
                      " classes, config says " + std::to_string(config.num_classes));
  Model model(config, flags, train_set.num_variables());
  TrainResult result{model.clone(), {}, 0, false};
  d::Adam optimizer(model.parameter_tensors(), d::AdamOptions{.lr = config.learning_rate});
  Rng shuffle_rng(config.seed ^ 0x5DEECE66DULL);
  const auto eps = pointers(train_set);
  std::vector<std::size_t> order(eps.size());
  std::iota(order.begin(), order.end(), 0);
  EarlyStopper stopper(config.patience);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const data::Episode*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(eps[order[i]]);
      optimizer.zero_grad();
      d::Tape tape;
      const ForwardResult fr = model.forward(batch);
      const Tensor l = loss(fr.logits, labels_of(batch));
      tape.backward(l);
      optimizer.step();
      loss_sum += l.item();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.val = evaluate(model, val_set, config.batch_size);
    rec.monitor = monitor_value(rec.val);
    rec.improved = stopper.update(rec.monitor);
    if (rec.improved) {
      result.model.copy_values_from(model);
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (options.on_epoch && options.on_epoch(rec, model)) break;
    if (stopper.should_stop()) {
      result.stopped_early = epoch < config.epochs;
      break;
    }
  }
  return result;
}

}  // namespace dbgl::model
