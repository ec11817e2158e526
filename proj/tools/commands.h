#pragma once

// Command implementations behind the dbgl executable. Each command is a pure
// function of its input files and options; reports are written as JSON and
// tables as CSV.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dbgl::cli {

namespace fs = std::filesystem;

// Dataset directory layout shared by synth, train, eval and analyze.
inline constexpr const char* kVariablesFile = "variables.csv";
inline constexpr const char* kObservationsFile = "observations.csv";
inline constexpr const char* kLabelsFile = "labels.csv";
inline constexpr const char* kSplitsFile = "splits.csv";

struct SynthOptions {
  nlohmann::json config = nlohmann::json::object();  // synthetic generator keys
  fs::path out;
};

struct TrainOptions {
  // Model keys (hidden_dim, codebook_size, layers, lr, batch_size, epochs,
  // patience, decay_kernel, seed) plus "ablate" (list of short names),
  // "leave_out" (rate) and optionally "t_max" (hours).
  nlohmann::json config = nlohmann::json::object();
  fs::path data;
  fs::path out;
};

struct EvalOptions {
  fs::path checkpoint;
  fs::path data;
  std::string split = "test";  // all, train, val or test
  double leave_out = 0.0;
  bool sweep = false;  // rates 0.1 .. 0.5, one report each
  std::optional<std::uint64_t> seed;
  fs::path out;
};

struct AnalyzeOptions {
  fs::path data;
  fs::path out;
  std::size_t bins = 10;
  std::optional<double> max_lag;
  std::size_t min_pairs = 5;
  std::size_t blocks = 10;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::string kernel = "mlp_exp";
  double tolerance = 1e-4;
  std::string corrupt_rule;  // op whose backward is scaled; empty for none
  double corrupt_factor = 1.01;
  std::optional<fs::path> out;
};

// Keys accepted in a training config file; anything else is a ConfigError.
const std::vector<std::string>& train_config_keys();

void run_synth(const SynthOptions& options);
// Returns the report that was written to <out>/report.json.
nlohmann::json run_train(const TrainOptions& options);
// Returns the reports written, one per leave-out rate.
std::vector<nlohmann::json> run_eval(const EvalOptions& options);
// Returns the process exit status (0 also when the test is refused).
int run_analyze(const AnalyzeOptions& options);
// Returns 0 when every block is within tolerance.
int run_gradcheck(const GradcheckOptions& options);

// Deterministic JSON text: two-space indent, trailing newline.
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

}  // namespace dbgl::cli
