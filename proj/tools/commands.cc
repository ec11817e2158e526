#include "commands.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dbgl/analysis.h"
#include "dbgl/checkpoint.h"
#include "dbgl/data.h"
#include "dbgl/errors.h"
#include "dbgl/gradcheck.h"
#include "dbgl/model.h"
#include "dbgl/synthetic.h"
#include "dbgl/tensor.h"

namespace dbgl::cli {

namespace {

using nlohmann::json;

constexpr std::array<double, 3> kSplitRatios{0.8, 0.1, 0.1};
constexpr double kSweepRates[] = {0.1, 0.2, 0.3, 0.4, 0.5};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory " + dir.string());
}

data::Dataset load_dir(const fs::path& dir, std::optional<double> t_max,
                       std::vector<std::string> variables = {}) {
  if (variables.empty() && fs::exists(dir / kVariablesFile))
    variables = data::read_variables(dir / kVariablesFile);
  return data::load_dataset(dir / kObservationsFile, dir / kLabelsFile, t_max,
                            std::move(variables));
}

data::SplitDataset split_dir(const data::Dataset& ds, const fs::path& dir,
                             std::uint64_t seed) {
  if (fs::exists(dir / kSplitsFile)) return data::apply_split_manifest(ds, dir / kSplitsFile);
  return data::split(ds, kSplitRatios, seed);
}

double max_time(const data::Dataset& ds) {
  double t = 0.0;
  for (const auto& ep : ds.episodes)
    if (!ep.times.empty()) t = std::max(t, ep.times.back());
  return t;
}

json names_of(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
  json out = json::array();
  for (std::size_t v : idx) out.push_back(ds.variables[v]);
  return out;
}

json maybe_evaluate(const model::Model& m, const data::Dataset& ds) {
  if (ds.episodes.empty()) return nullptr;
  return model::evaluate(m, ds, m.config().batch_size);
}

// Rates print as 0.1 rather than 0.10000000000000001 in file names.
std::string rate_tag(double rate) {
  std::ostringstream s;
  s << std::setprecision(6) << rate;
  return s.str();
}

}  // namespace

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// --- synth ------------------------------------------------------------------

void run_synth(const SynthOptions& options) {
  const data::SyntheticConfig config = options.config.get<data::SyntheticConfig>();
  config.validate();
  const data::Dataset ds = data::synthesize(config);
  ensure_dir(options.out);
  data::write_variables(ds, options.out / kVariablesFile);
  data::write_observations(ds, options.out / kObservationsFile);
  data::write_labels(ds, options.out / kLabelsFile);
  data::write_split_manifest(data::split(ds, kSplitRatios, config.seed),
                             options.out / kSplitsFile);
  write_json(options.out / "synth_config.json", json(config));
}

// --- train ------------------------------------------------------------------

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "hidden_dim", "codebook_size", "layers",  "lr",    "batch_size",
      "epochs",     "patience",      "decay_kernel", "seed", "num_classes",
      "ablate",     "leave_out",     "t_max"};
  return keys;
}

json run_train(const TrainOptions& options) {
  const auto& keys = train_config_keys();
  for (const auto& [key, _] : options.config.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError("unknown training config key '" + key + "'");
  model::ModelConfig config = options.config.get<model::ModelConfig>();
  model::AblationFlags flags;
  for (const auto& name : options.config.value("ablate", std::vector<std::string>{}))
    flags.disable(name);
  const double leave_out = options.config.value("leave_out", 0.0);
  if (leave_out < 0.0 || leave_out >= 1.0)
    throw ConfigError("leave_out must lie in [0, 1)");

  const auto started = std::chrono::steady_clock::now();
  const data::Dataset ds = load_dir(options.data, std::nullopt);
  if (options.config.contains("num_classes") && config.num_classes != ds.num_classes)
    throw ConfigError("num_classes " + std::to_string(config.num_classes) +
                      " does not match the labels (" + std::to_string(ds.num_classes) + ")");
  config.num_classes = ds.num_classes;
  config.validate();

  data::SplitDataset splits = split_dir(ds, options.data, config.seed);
  if (splits.train.episodes.empty()) throw ConfigError("training split is empty");
  const double t_max = options.config.contains("t_max")
                           ? options.config.at("t_max").get<double>()
                           : max_time(splits.train);
  for (data::Dataset* part : {&splits.train, &splits.val, &splits.test})
    data::set_t_max(*part, t_max);
  splits = data::normalize(splits);

  json leave = {{"rate", leave_out}, {"hidden", json::array()}};
  if (leave_out > 0.0) {
    const data::LeaveOutResult lo = data::leave_variables_out(splits, leave_out, config.seed);
    leave["hidden"] = names_of(ds, lo.hidden);
    splits = lo.data;
  }

  const model::TrainResult result = model::train(splits.train, splits.val, config, flags);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  ensure_dir(options.out);
  model::save_checkpoint(options.out / "checkpoint.json", result.model,
                         {ds.variables, t_max, splits.train.norm});
  json report = {
      {"command", "train"},
      {"config", config},
      {"flags", result.model.flags()},
      {"leave_out", leave},
      {"t_max", t_max},
      {"variables", ds.variables},
      {"split_sizes",
       {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}},
      {"history", result.history},
      {"best_epoch", result.best_epoch},
      {"stopped_early", result.stopped_early},
      {"metrics",
       {{"train", maybe_evaluate(result.model, splits.train)},
        {"val", maybe_evaluate(result.model, splits.val)},
        {"test", maybe_evaluate(result.model, splits.test)}}}};
  write_json(options.out / "report.json", report);
  // Wall-clock time lives apart from the report so reports stay reproducible.
  write_json(options.out / "timing.json",
             {{"seconds", seconds}, {"epochs_run", result.history.size()}});
  return report;
}

// --- eval -------------------------------------------------------------------

std::vector<json> run_eval(const EvalOptions& options) {
  static const std::vector<std::string> splits_allowed{"all", "train", "val", "test"};
  if (std::find(splits_allowed.begin(), splits_allowed.end(), options.split) ==
      splits_allowed.end())
    throw ConfigError("split must be one of all, train, val, test");
  if (options.sweep && options.leave_out != 0.0)
    throw ConfigError("--sweep and --leave-out are mutually exclusive");
  if (options.leave_out < 0.0 || options.leave_out >= 1.0)
    throw ConfigError("leave-out rate must lie in [0, 1)");

  const model::Checkpoint ckpt = model::load_checkpoint(options.checkpoint);
  const model::Model& m = ckpt.model;
  if (fs::exists(options.data / kVariablesFile) &&
      data::read_variables(options.data / kVariablesFile) != ckpt.context.variables)
    throw CompatibilityError("dataset variables differ from the checkpoint's " +
                             std::to_string(ckpt.context.variables.size()) + " variables");
  // Same horizon as training; later timestamps are kept and their intervals
  // capped, as for the val and test splits during training.
  data::Dataset ds = load_dir(options.data, std::nullopt, ckpt.context.variables);
  data::set_t_max(ds, ckpt.context.t_max);
  if (ds.num_classes > m.config().num_classes)
    throw CompatibilityError("labels have " + std::to_string(ds.num_classes) +
                             " classes but the checkpoint predicts " +
                             std::to_string(m.config().num_classes));
  ds.num_classes = m.config().num_classes;
  if (ckpt.context.norm) ds = data::normalize(ds, *ckpt.context.norm);

  data::Dataset part = ds;
  if (options.split != "all") {
    const data::SplitDataset s = split_dir(ds, options.data, m.config().seed);
    part = options.split == "train" ? s.train : options.split == "val" ? s.val : s.test;
  }
  if (part.episodes.empty()) throw ConfigError("split '" + options.split + "' is empty");

  const std::uint64_t seed = options.seed.value_or(m.config().seed);
  std::vector<double> rates;
  if (options.sweep)
    rates.assign(std::begin(kSweepRates), std::end(kSweepRates));
  else
    rates.push_back(options.leave_out);

  ensure_dir(options.out);
  std::vector<json> reports;
  for (double rate : rates) {
    data::Dataset target = part;
    json leave = {{"rate", rate}, {"seed", seed}, {"hidden", json::array()}};
    if (rate > 0.0) {
      const data::LeaveOutResult lo = data::leave_variables_out({part, part, part}, rate, seed);
      leave["hidden"] = names_of(ds, lo.hidden);
      target = lo.data.test;
    }
    json report = {{"command", "eval"},
                   {"checkpoint_config", m.config()},
                   {"flags", m.flags()},
                   {"split", options.split},
                   {"leave_out", leave},
                   {"metrics", model::evaluate(m, target, m.config().batch_size)}};
    const std::string name =
        options.sweep ? "report_leave_out_" + rate_tag(rate) + ".json" : "report.json";
    write_json(options.out / name, report);
    reports.push_back(std::move(report));
  }
  return reports;
}

// --- analyze ----------------------------------------------------------------

int run_analyze(const AnalyzeOptions& options) {
  const data::Dataset ds = load_dir(options.data, std::nullopt);
  analysis::LagBinning binning;
  binning.bins = options.bins;
  binning.max_lag = options.max_lag;
  binning.min_pairs = options.min_pairs;
  const analysis::DecayReport rep = analysis::analyze_decay(ds, binning, options.blocks);

  ensure_dir(options.out);
  {
    std::ofstream out(options.out / "decay_rates.csv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (options.out / "decay_rates.csv").string());
    out << "variable,lambda,residual,n_bins\n" << std::setprecision(17);
    for (const auto& v : rep.variables) {
      if (v.fit)
        out << v.variable << ',' << v.fit->lambda << ',' << v.fit->residual << ','
            << v.fit->bins_used << '\n';
      else
        out << v.variable << ",NA,NA,0\n";
      if (!v.note.empty()) std::cerr << v.variable << ": " << v.note << '\n';
    }
  }
  if (rep.kruskal_wallis) {
    std::ofstream out(options.out / "kruskal_wallis.csv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (options.out / "kruskal_wallis.csv").string());
    out << "H,df,p\n"
        << std::setprecision(17) << rep.kruskal_wallis->h << ',' << rep.kruskal_wallis->df
        << ',' << rep.kruskal_wallis->p << '\n';
    std::cout << "Kruskal-Wallis H=" << rep.kruskal_wallis->h
              << " df=" << rep.kruskal_wallis->df << " p=" << rep.kruskal_wallis->p << '\n';
  } else {
    std::cout << "Kruskal-Wallis test not run: " << rep.kruskal_wallis_note << '\n';
  }
  json blocks = json::object();
  for (std::size_t v = 0; v < rep.variables.size(); ++v)
    blocks[rep.variables[v].variable] = rep.block_estimates[v];
  write_json(options.out / "decay_blocks.json", blocks);
  return 0;
}

// --- gradcheck --------------------------------------------------------------

int run_gradcheck(const GradcheckOptions& options) {
  const temporal::DecayKind kernel = temporal::parse_decay_kind(options.kernel);
  const data::Dataset ds = model::gradcheck_fixture(options.seed);
  const model::Model m = model::gradcheck_model(options.seed, kernel);
  std::vector<const data::Episode*> batch;
  for (const auto& ep : ds.episodes) batch.push_back(&ep);

  model::GradcheckOptions check;
  check.tolerance = options.tolerance;
  if (!options.corrupt_rule.empty())
    diff::set_backward_fault(options.corrupt_rule, options.corrupt_factor);
  model::GradcheckResult result;
  try {
    result = model::gradcheck(m, batch, check);
  } catch (...) {
    diff::set_backward_fault("", 1.0);
    throw;
  }
  diff::set_backward_fault("", 1.0);

  json blocks = json::array();
  std::printf("%-32s %8s %8s %8s %12s\n", "block", "size", "checked", "kink", "max_rel_err");
  for (const auto& b : result.blocks) {
    std::printf("%-32s %8zu %8zu %8zu %12.3e%s\n", b.name.c_str(), b.size, b.checked,
                b.on_kink, b.max_rel_err, b.max_rel_err > options.tolerance ? "  FAIL" : "");
    blocks.push_back({{"name", b.name},
                      {"size", b.size},
                      {"checked", b.checked},
                      {"on_kink", b.on_kink},
                      {"max_rel_err", b.max_rel_err},
                      {"max_abs_grad", b.max_abs_grad}});
  }
  std::printf("max relative error %.3e (tolerance %.1e): %s\n", result.max_rel_err,
              options.tolerance, result.passed ? "PASS" : "FAIL");
  if (options.out) {
    ensure_dir(*options.out);
    write_json(*options.out / "gradcheck.json",
               {{"kernel", options.kernel},
                {"seed", options.seed},
                {"tolerance", options.tolerance},
                {"corrupt_rule", options.corrupt_rule},
                {"blocks", blocks},
                {"max_rel_err", result.max_rel_err},
                {"passed", result.passed}});
  }
  return result.passed ? 0 : 1;
}

}  // namespace dbgl::cli
