#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dbgl::data {

struct Observation {
  std::string patient_id;
  double time = 0.0;  // hours
  std::size_t variable = 0;
  double value = 0.0;
};

// One patient record on its own irregular time grid. Step i holds every
// observation sharing timestamp times[i]; per-step arrays are steps x V,
// row-major.
struct Episode {
  std::string patient_id;
  std::size_t num_variables = 0;
  std::vector<double> times;
  std::vector<double> values;        // NaN where unobserved
  std::vector<std::uint8_t> mask;    // 1 where observed
  std::vector<double> delta_t;       // 0 where unobserved
  int label = 0;

  std::size_t steps() const { return times.size(); }
  bool observed(std::size_t step, std::size_t v) const {
    return mask[step * num_variables + v] != 0;
  }
  double value(std::size_t step, std::size_t v) const {
    return values[step * num_variables + v];
  }
  double dt(std::size_t step, std::size_t v) const {
    return delta_t[step * num_variables + v];
  }
  std::size_t observation_count() const;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Dataset {
  std::vector<std::string> variables;
  std::vector<Episode> episodes;
  double t_max = 0.0;
  int num_classes = 2;
  std::optional<NormStats> norm;  // set once values are z-scored

  std::size_t num_variables() const { return variables.size(); }
  std::size_t size() const { return episodes.size(); }
};

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

// kPatient keeps every record of a patient in one partition; the patient is
// the part of the id before an optional '/' (e.g. "p17/adm2"). kRecord
// splits each record independently.
enum class SplitUnit { kPatient, kRecord };

// --- Construction and I/O ---------------------------------------------------

// Assembles episodes from raw observations. Observations sharing a patient
// timestamp form one step; a repeated (patient, time, variable) keeps the last
// value. Labels must cover every patient with observations. When `t_max` is
// empty the largest timestamp is used.
Dataset build_dataset(std::vector<std::string> variables,
                      const std::vector<Observation>& observations,
                      const std::map<std::string, int>& labels,
                      std::optional<double> t_max = std::nullopt,
                      std::optional<int> num_classes = std::nullopt);

std::vector<std::string> read_variables(const std::filesystem::path& path);
std::map<std::string, int> read_labels(const std::filesystem::path& path);

// Reads the observations and labels CSVs. With `variables` empty the variable
// list is the sorted set of names in the file; otherwise an unknown name is a
// SchemaError.
Dataset load_dataset(const std::filesystem::path& observations_path,
                     const std::filesystem::path& labels_path,
                     std::optional<double> t_max = std::nullopt,
                     std::vector<std::string> variables = {});

void write_variables(const Dataset& ds, const std::filesystem::path& path);
void write_observations(const Dataset& ds, const std::filesystem::path& path);
void write_labels(const Dataset& ds, const std::filesystem::path& path);
void write_split_manifest(const SplitDataset& splits,
                          const std::filesystem::path& path);

// --- Elapsed intervals ------------------------------------------------------

// Interval for each observation of variable v, in observation order: mean of
// the gaps to both neighbors, the single gap when only one neighbor exists,
// and t_max / 2 for an isolated observation. Results are capped at t_max.
std::vector<double> compute_delta_t(const Episode& episode, std::size_t v,
                                    double t_max);

// Recomputes every episode's delta_t array for a new horizon.
void set_t_max(Dataset& ds, double t_max);

// --- Normalization and splitting -------------------------------------------

NormStats fit_normalization(const Dataset& train);
Dataset normalize(const Dataset& ds, const NormStats& stats);
Dataset denormalize(const Dataset& ds);
// Fits on train and applies to all three partitions.
SplitDataset normalize(const SplitDataset& splits);

SplitDataset split(const Dataset& ds, std::array<double, 3> ratios,
                   std::uint64_t seed, SplitUnit unit = SplitUnit::kPatient);
SplitDataset apply_split_manifest(const Dataset& ds,
                                  const std::filesystem::path& path);

// --- Robustness protocol ----------------------------------------------------

struct LeaveOutResult {
  SplitDataset data;
  std::vector<std::size_t> hidden;  // sorted variable indices
  bool no_op = false;               // floor(rate * V) == 0
};

// Hides floor(rate * V) seeded-random variables from validation and test.
// Training data is returned untouched.
LeaveOutResult leave_variables_out(const SplitDataset& splits, double rate,
                                   std::uint64_t seed);

// Drops every observation of the listed variables; steps left empty are
// removed and intervals recomputed.
Dataset hide_variables(const Dataset& ds, const std::vector<std::size_t>& hidden);

}  // namespace dbgl::data
