// dbgl: synthesize data, train and evaluate models, analyze decay rates and
// check gradients. Config file keys and flags name the same settings; a flag
// given on the command line overrides the file.

#include <iostream>

#include "CLI11.hpp"

#include "commands.h"
#include "dbgl/errors.h"

namespace {

using nlohmann::json;
namespace cli = dbgl::cli;

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = cli::read_json(path);
  if (!j.is_object()) throw dbgl::ConfigError(path + ": config must be a JSON object");
  return j;
}

// Copies a flag into the config only when it was given.
template <typename T>
void overlay(json& config, const CLI::Option* opt, const char* key, const T& value) {
  if (opt->count() > 0) config[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decay-aware bipartite graph learning for irregular time series"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  std::string synth_config;
  std::uint64_t synth_seed = 0;
  cli::SynthOptions synth_opts;
  synth->add_option("--config", synth_config, "Generator config JSON")->check(CLI::ExistingFile);
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_opts.out, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint and report");
  cli::TrainOptions train_opts;
  std::string train_config;
  std::size_t hidden_dim = 0, codebook_size = 0, layers = 0, batch_size = 0, epochs = 0,
              patience = 0;
  double lr = 0.0, leave_out = 0.0, t_max = 0.0;
  std::string kernel;
  std::uint64_t train_seed = 0;
  std::vector<std::string> ablate;
  train->add_option("--config", train_config, "Training config JSON")->check(CLI::ExistingFile);
  train->add_option("--data", train_opts.data, "Dataset directory")->required()->check(
      CLI::ExistingDirectory);
  train->add_option("--out", train_opts.out, "Output directory")->required();
  auto* o_hidden = train->add_option("--hidden-dim", hidden_dim);
  auto* o_codebook = train->add_option("--codebook-size", codebook_size);
  auto* o_layers = train->add_option("--layers", layers);
  auto* o_lr = train->add_option("--lr", lr);
  auto* o_batch = train->add_option("--batch-size", batch_size);
  auto* o_epochs = train->add_option("--epochs", epochs);
  auto* o_patience = train->add_option("--patience", patience);
  auto* o_kernel = train->add_option("--kernel,--decay-kernel", kernel,
                                     "mlp_exp, exp, mlp_gaussian or mlp_linear");
  auto* o_seed = train->add_option("--seed", train_seed);
  auto* o_ablate = train->add_option("--ablate", ablate, "tde, sna, hvs, cb, mcv or te (repeatable)")
                       ->take_all();
  auto* o_leave = train->add_option("--leave-out", leave_out,
                                    "Fraction of variables hidden from val and test");
  auto* o_tmax = train->add_option("--t-max", t_max, "Interval horizon in hours");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  cli::EvalOptions eval_opts;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_opts.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_opts.data)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", eval_opts.split, "all, train, val or test")->capture_default_str();
  eval->add_option("--leave-out", eval_opts.leave_out, "Fraction of variables to hide");
  eval->add_flag("--sweep", eval_opts.sweep, "Leave-out rates 0.1 to 0.5, one report each");
  auto* eval_seed_opt = eval->add_option("--seed", eval_seed, "Leave-out seed");
  eval->add_option("--out", eval_opts.out)->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Estimate per-variable decay rates");
  cli::AnalyzeOptions analyze_opts;
  double max_lag = 0.0;
  analyze->add_option("--data", analyze_opts.data)->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--out", analyze_opts.out)->required();
  analyze->add_option("--bins", analyze_opts.bins)->capture_default_str();
  auto* max_lag_opt = analyze->add_option("--max-lag", max_lag, "Default: t_max / 4");
  analyze->add_option("--min-pairs", analyze_opts.min_pairs)->capture_default_str();
  analyze->add_option("--blocks", analyze_opts.blocks, "Episode blocks for the rank test")
      ->capture_default_str();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every parameter block");
  cli::GradcheckOptions grad_opts;
  std::string grad_out;
  grad->add_option("--seed", grad_opts.seed)->capture_default_str();
  grad->add_option("--kernel", grad_opts.kernel)->capture_default_str();
  grad->add_option("--tolerance", grad_opts.tolerance)->capture_default_str();
  grad->add_option("--corrupt-rule", grad_opts.corrupt_rule,
                   "Scale the backward rule of this op to test the checker");
  grad->add_option("--corrupt-factor", grad_opts.corrupt_factor)->capture_default_str();
  grad->add_option("--out", grad_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_opts.config = load_config(synth_config);
      overlay(synth_opts.config, synth_seed_opt, "seed", synth_seed);
      cli::run_synth(synth_opts);
      return 0;
    }
    if (train->parsed()) {
      json& c = train_opts.config;
      c = load_config(train_config);
      overlay(c, o_hidden, "hidden_dim", hidden_dim);
      overlay(c, o_codebook, "codebook_size", codebook_size);
      overlay(c, o_layers, "layers", layers);
      overlay(c, o_lr, "lr", lr);
      overlay(c, o_batch, "batch_size", batch_size);
      overlay(c, o_epochs, "epochs", epochs);
      overlay(c, o_patience, "patience", patience);
      overlay(c, o_kernel, "decay_kernel", kernel);
      overlay(c, o_seed, "seed", train_seed);
      overlay(c, o_ablate, "ablate", ablate);
      overlay(c, o_leave, "leave_out", leave_out);
      overlay(c, o_tmax, "t_max", t_max);
      const json report = cli::run_train(train_opts);
      std::cout << "trained " << report.at("history").size() << " epochs, best "
                << report.at("best_epoch") << "; wrote " << train_opts.out.string() << '\n';
      return 0;
    }
    if (eval->parsed()) {
      if (eval_seed_opt->count() > 0) eval_opts.seed = eval_seed;
      const auto reports = cli::run_eval(eval_opts);
      for (const auto& r : reports)
        std::cout << "leave-out " << r.at("leave_out").at("rate") << ": "
                  << r.at("metrics").dump() << '\n';
      return 0;
    }
    if (analyze->parsed()) {
      if (max_lag_opt->count() > 0) analyze_opts.max_lag = max_lag;
      return cli::run_analyze(analyze_opts);
    }
    if (grad->parsed()) {
      if (!grad_out.empty()) grad_opts.out = grad_out;
      return cli::run_gradcheck(grad_opts);
    }
  } catch (const dbgl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
