#include "dbgl/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dbgl/errors.h"
#include "dbgl/rng.h"

namespace dbgl::data {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Reads a whole CSV file, checks the header and splits rows into fields.
// Quoted fields are rejected rather than interpreted.
class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, std::vector<std::string> header)
      : path_(path), in_(path), width_(header.size()) {
    if (!in_) throw IoError("cannot open " + path.string());
    std::string line;
    if (!next_line(line)) {
      throw ParseError(path.string() + ": missing header line");
    }
    if (split(line) != header) {
      std::string expected;
      for (std::size_t i = 0; i < header.size(); ++i)
        expected += (i ? "," : "") + header[i];
      throw ParseError(path.string() + ":1: expected header '" + expected +
                       "', got '" + line + "'");
    }
  }

  // Next non-empty row; false at end of file.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (next_line(line)) {
      if (line.empty()) continue;
      fields = split(line);
      if (fields.size() != width_) {
        fail("expected " + std::to_string(width_) + " fields, got " +
             std::to_string(fields.size()));
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_.string() + ":" + std::to_string(line_no_) + ": " + what);
  }

  double number(const std::string& field, const char* name) const {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (field.empty() || res.ec != std::errc() || res.ptr != end) {
      fail(std::string("invalid ") + name + " '" + field + "'");
    }
    return v;
  }

  long long integer(const std::string& field, const char* name) const {
    long long v = 0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (field.empty() || res.ec != std::errc() || res.ptr != end) {
      fail(std::string("invalid ") + name + " '" + field + "'");
    }
    return v;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  bool next_line(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find('"') != std::string::npos) {
      fail("quoted fields are not supported");
    }
    return true;
  }

  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(std::move(cur));
    return out;
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t width_;
  std::size_t line_no_ = 0;
};

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void fill_delta_t(Episode& ep, double t_max) {
  const std::size_t V = ep.num_variables;
  ep.delta_t.assign(ep.steps() * V, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const auto dts = compute_delta_t(ep, v, t_max);
    std::size_t k = 0;
    for (std::size_t s = 0; s < ep.steps(); ++s)
      if (ep.observed(s, v)) ep.delta_t[s * V + v] = dts[k++];
  }
}

std::string group_key(const std::string& id, SplitUnit unit) {
  if (unit == SplitUnit::kRecord) return id;
  return id.substr(0, id.find('/'));
}

Dataset with_episodes(const Dataset& like, std::vector<Episode> episodes) {
  Dataset out;
  out.variables = like.variables;
  out.t_max = like.t_max;
  out.num_classes = like.num_classes;
  out.norm = like.norm;
  out.episodes = std::move(episodes);
  return out;
}

}  // namespace

std::size_t Episode::observation_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

// --- Construction -----------------------------------------------------------

Dataset build_dataset(std::vector<std::string> variables,
                      const std::vector<Observation>& observations,
                      const std::map<std::string, int>& labels,
                      std::optional<double> t_max,
                      std::optional<int> num_classes) {
  const std::size_t V = variables.size();
  // patient -> time -> variable -> value; later entries overwrite earlier.
  std::map<std::string, std::map<double, std::map<std::size_t, double>>> grid;
  double max_time = 0.0;
  for (const auto& o : observations) {
    if (o.variable >= V) {
      throw SchemaError("variable index " + std::to_string(o.variable) +
                        " outside the " + std::to_string(V) + " declared variables");
    }
    if (!(o.time >= 0.0) || !std::isfinite(o.time)) {
      throw ValidationError("patient " + o.patient_id + ": invalid time " +
                            format_double(o.time));
    }
    if (!std::isfinite(o.value)) {
      throw DataError("patient " + o.patient_id + ": non-finite value at time " +
                      format_double(o.time));
    }
    if (t_max && o.time > *t_max) {
      throw ValidationError("patient " + o.patient_id + ": time " +
                            format_double(o.time) + " exceeds t_max " +
                            format_double(*t_max));
    }
    grid[o.patient_id][o.time][o.variable] = o.value;
    max_time = std::max(max_time, o.time);
  }

  Dataset ds;
  ds.variables = std::move(variables);
  ds.t_max = t_max ? *t_max : (max_time > 0.0 ? max_time : 1.0);
  if (!(ds.t_max > 0.0)) throw ValidationError("t_max must be positive");

  int max_label = -1;
  for (auto& [pid, steps] : grid) {
    const auto lab = labels.find(pid);
    if (lab == labels.end()) {
      throw CompletenessError("no label for patient " + pid);
    }
    if (lab->second < 0) {
      throw ValidationError("patient " + pid + ": negative label");
    }
    Episode ep;
    ep.patient_id = pid;
    ep.num_variables = V;
    ep.label = lab->second;
    max_label = std::max(max_label, ep.label);
    ep.times.reserve(steps.size());
    ep.values.assign(steps.size() * V, kNaN);
    ep.mask.assign(steps.size() * V, 0);
    std::size_t s = 0;
    for (const auto& [time, row] : steps) {
      ep.times.push_back(time);
      for (const auto& [v, value] : row) {
        ep.values[s * V + v] = value;
        ep.mask[s * V + v] = 1;
      }
      ++s;
    }
    fill_delta_t(ep, ds.t_max);
    ds.episodes.push_back(std::move(ep));
  }
  ds.num_classes = num_classes ? *num_classes : std::max(2, max_label + 1);
  if (max_label >= ds.num_classes) {
    throw ValidationError("label " + std::to_string(max_label) +
                          " outside the " + std::to_string(ds.num_classes) +
                          " declared classes");
  }
  return ds;
}

std::vector<std::string> read_variables(const std::filesystem::path& path) {
  CsvReader csv(path, {"variable"});
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::vector<std::string> f;
  while (csv.next(f)) {
    if (f[0].empty()) csv.fail("empty variable name");
    if (!seen.insert(f[0]).second) csv.fail("duplicate variable '" + f[0] + "'");
    out.push_back(f[0]);
  }
  return out;
}

std::map<std::string, int> read_labels(const std::filesystem::path& path) {
  CsvReader csv(path, {"patient_id", "label"});
  std::map<std::string, int> out;
  std::vector<std::string> f;
  while (csv.next(f)) {
    const long long label = csv.integer(f[1], "label");
    if (label < 0 || label > std::numeric_limits<int>::max()) {
      csv.fail("label must be a non-negative class index");
    }
    out[f[0]] = static_cast<int>(label);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& observations_path,
                     const std::filesystem::path& labels_path,
                     std::optional<double> t_max,
                     std::vector<std::string> variables) {
  struct Raw {
    std::string pid;
    double time;
    std::string var;
    double value;
    std::size_t line;
  };
  std::vector<Raw> raw;
  {
    CsvReader csv(observations_path, {"patient_id", "time", "variable", "value"});
    std::vector<std::string> f;
    while (csv.next(f)) {
      if (f[0].empty()) csv.fail("empty patient_id");
      raw.push_back({f[0], csv.number(f[1], "time"), f[2],
                     csv.number(f[3], "value"), csv.line_no()});
      if (raw.back().time < 0.0) csv.fail("negative time");
    }
  }
  const bool declared = !variables.empty();
  if (!declared) {
    std::set<std::string> names;
    for (const auto& r : raw) names.insert(r.var);
    variables.assign(names.begin(), names.end());
  }
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < variables.size(); ++i) index[variables[i]] = i;

  std::vector<Observation> obs;
  obs.reserve(raw.size());
  for (const auto& r : raw) {
    const auto it = index.find(r.var);
    if (it == index.end()) {
      throw SchemaError(observations_path.string() + ":" + std::to_string(r.line) +
                        ": unknown variable '" + r.var + "'");
    }
    obs.push_back({r.pid, r.time, it->second, r.value});
  }
  return build_dataset(std::move(variables), obs, read_labels(labels_path), t_max);
}

void write_variables(const Dataset& ds, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "variable\n";
  for (const auto& v : ds.variables) out << v << '\n';
}

void write_observations(const Dataset& ds, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "patient_id,time,variable,value\n";
  for (const auto& ep : ds.episodes)
    for (std::size_t s = 0; s < ep.steps(); ++s)
      for (std::size_t v = 0; v < ep.num_variables; ++v)
        if (ep.observed(s, v))
          out << ep.patient_id << ',' << format_double(ep.times[s]) << ','
              << ds.variables[v] << ',' << format_double(ep.value(s, v)) << '\n';
}

void write_labels(const Dataset& ds, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "patient_id,label\n";
  for (const auto& ep : ds.episodes) out << ep.patient_id << ',' << ep.label << '\n';
}

void write_split_manifest(const SplitDataset& splits,
                          const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "patient_id,split\n";
  for (const auto& [name, part] :
       {std::pair<const char*, const Dataset*>{"train", &splits.train},
        {"val", &splits.val},
        {"test", &splits.test}})
    for (const auto& ep : part->episodes) out << ep.patient_id << ',' << name << '\n';
}

// --- Elapsed intervals ------------------------------------------------------

std::vector<double> compute_delta_t(const Episode& episode, std::size_t v,
                                    double t_max) {
  std::vector<double> times;
  for (std::size_t s = 0; s < episode.steps(); ++s)
    if (episode.observed(s, v)) times.push_back(episode.times[s]);
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const bool has_prev = i > 0;
    const bool has_next = i + 1 < times.size();
    double dt;
    if (has_prev && has_next) {
      dt = ((times[i] - times[i - 1]) + (times[i + 1] - times[i])) / 2.0;
    } else if (has_prev) {
      dt = times[i] - times[i - 1];
    } else if (has_next) {
      dt = times[i + 1] - times[i];
    } else {
      dt = t_max / 2.0;
    }
    out[i] = std::min(dt, t_max);
  }
  return out;
}

void set_t_max(Dataset& ds, double t_max) {
  if (!(t_max > 0.0)) throw ValidationError("t_max must be positive");
  ds.t_max = t_max;
  for (auto& ep : ds.episodes) fill_delta_t(ep, t_max);
}

// --- Normalization ----------------------------------------------------------

NormStats fit_normalization(const Dataset& train) {
  const std::size_t V = train.num_variables();
  std::vector<double> sum(V, 0.0), count(V, 0.0);
  for (const auto& ep : train.episodes)
    for (std::size_t s = 0; s < ep.steps(); ++s)
      for (std::size_t v = 0; v < V; ++v)
        if (ep.observed(s, v)) {
          sum[v] += ep.value(s, v);
          count[v] += 1.0;
        }
  NormStats stats{std::vector<double>(V, 0.0), std::vector<double>(V, 1.0)};
  for (std::size_t v = 0; v < V; ++v)
    if (count[v] > 0) stats.mean[v] = sum[v] / count[v];
  std::vector<double> sq(V, 0.0);
  for (const auto& ep : train.episodes)
    for (std::size_t s = 0; s < ep.steps(); ++s)
      for (std::size_t v = 0; v < V; ++v)
        if (ep.observed(s, v)) {
          const double d = ep.value(s, v) - stats.mean[v];
          sq[v] += d * d;
        }
  for (std::size_t v = 0; v < V; ++v) {
    if (count[v] == 0) continue;
    const double sd = std::sqrt(sq[v] / count[v]);
    stats.stddev[v] = sd < 1e-8 ? 1.0 : sd;
  }
  return stats;
}

Dataset normalize(const Dataset& ds, const NormStats& stats) {
  if (ds.norm) throw ContractError("dataset is already normalized");
  if (stats.mean.size() != ds.num_variables()) {
    throw ValidationError("normalization stats cover " +
                          std::to_string(stats.mean.size()) + " variables, dataset has " +
                          std::to_string(ds.num_variables()));
  }
  Dataset out = ds;
  for (auto& ep : out.episodes)
    for (std::size_t s = 0; s < ep.steps(); ++s)
      for (std::size_t v = 0; v < ep.num_variables; ++v)
        if (ep.observed(s, v)) {
          double& x = ep.values[s * ep.num_variables + v];
          x = (x - stats.mean[v]) / stats.stddev[v];
        }
  out.norm = stats;
  return out;
}

Dataset denormalize(const Dataset& ds) {
  if (!ds.norm) return ds;
  Dataset out = ds;
  const NormStats& stats = *ds.norm;
  for (auto& ep : out.episodes)
    for (std::size_t s = 0; s < ep.steps(); ++s)
      for (std::size_t v = 0; v < ep.num_variables; ++v)
        if (ep.observed(s, v)) {
          double& x = ep.values[s * ep.num_variables + v];
          x = x * stats.stddev[v] + stats.mean[v];
        }
  out.norm.reset();
  return out;
}

SplitDataset normalize(const SplitDataset& splits) {
  const NormStats stats = fit_normalization(splits.train);
  return {normalize(splits.train, stats), normalize(splits.val, stats),
          normalize(splits.test, stats)};
}

// --- Splitting --------------------------------------------------------------

SplitDataset split(const Dataset& ds, std::array<double, 3> ratios,
                   std::uint64_t seed, SplitUnit unit) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ValidationError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("split ratios must sum to 1");
  }
  std::vector<std::string> groups;
  {
    std::set<std::string> keys;
    for (const auto& ep : ds.episodes) keys.insert(group_key(ep.patient_id, unit));
    groups.assign(keys.begin(), keys.end());
  }
  const std::size_t n = groups.size();
  if (n < 3) {
    throw SizingError("cannot split " + std::to_string(n) +
                      " patients into three non-empty partitions");
  }
  // Largest-remainder apportionment, then guarantee one patient per part.
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best] + 1e-12) best = i;
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (sizes[i] > 0) continue;
    const auto donor = std::max_element(sizes.begin(), sizes.end());
    --*donor;
    sizes[i] = 1;
  }

  Rng rng(seed);
  rng.shuffle(groups);
  std::map<std::string, int> part;
  for (std::size_t i = 0; i < n; ++i)
    part[groups[i]] = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);

  std::array<std::vector<Episode>, 3> eps;
  for (const auto& ep : ds.episodes)
    eps[part.at(group_key(ep.patient_id, unit))].push_back(ep);
  return {with_episodes(ds, std::move(eps[0])), with_episodes(ds, std::move(eps[1])),
          with_episodes(ds, std::move(eps[2]))};
}

SplitDataset apply_split_manifest(const Dataset& ds,
                                  const std::filesystem::path& path) {
  CsvReader csv(path, {"patient_id", "split"});
  std::map<std::string, int> part;
  std::vector<std::string> f;
  while (csv.next(f)) {
    int p;
    if (f[1] == "train") p = 0;
    else if (f[1] == "val") p = 1;
    else if (f[1] == "test") p = 2;
    else csv.fail("unknown split '" + f[1] + "'");
    part[f[0]] = p;
  }
  std::array<std::vector<Episode>, 3> eps;
  for (const auto& ep : ds.episodes) {
    const auto it = part.find(ep.patient_id);
    if (it == part.end()) {
      throw CompletenessError(path.string() + ": no split for patient " +
                              ep.patient_id);
    }
    eps[it->second].push_back(ep);
  }
  return {with_episodes(ds, std::move(eps[0])), with_episodes(ds, std::move(eps[1])),
          with_episodes(ds, std::move(eps[2]))};
}

// --- Robustness protocol ----------------------------------------------------

Dataset hide_variables(const Dataset& ds, const std::vector<std::size_t>& hidden) {
  const std::size_t V = ds.num_variables();
  std::vector<char> is_hidden(V, 0);
  for (std::size_t v : hidden) {
    if (v >= V) throw ValidationError("hidden variable index out of range");
    is_hidden[v] = 1;
  }
  Dataset out = with_episodes(ds, {});
  out.episodes.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) {
    Episode e;
    e.patient_id = ep.patient_id;
    e.num_variables = V;
    e.label = ep.label;
    for (std::size_t s = 0; s < ep.steps(); ++s) {
      bool any = false;
      for (std::size_t v = 0; v < V; ++v) any |= ep.observed(s, v) && !is_hidden[v];
      if (!any) continue;
      e.times.push_back(ep.times[s]);
      for (std::size_t v = 0; v < V; ++v) {
        const bool keep = ep.observed(s, v) && !is_hidden[v];
        e.values.push_back(keep ? ep.value(s, v) : kNaN);
        e.mask.push_back(keep ? 1 : 0);
      }
    }
    fill_delta_t(e, ds.t_max);
    out.episodes.push_back(std::move(e));
  }
  return out;
}

LeaveOutResult leave_variables_out(const SplitDataset& splits, double rate,
                                   std::uint64_t seed) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ValidationError("leave-out rate must lie in (0, 1)");
  }
  const std::size_t V = splits.train.num_variables();
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(V) + 1e-9));
  LeaveOutResult res{splits, {}, k == 0};
  if (k == 0) return res;
  std::vector<std::size_t> order(V);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  res.hidden.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(res.hidden.begin(), res.hidden.end());
  res.data.val = hide_variables(splits.val, res.hidden);
  res.data.test = hide_variables(splits.test, res.hidden);
  return res;
}

}  // namespace dbgl::data
