#include "dbgl/checkpoint.h"

#include <fstream>

#include "dbgl/errors.h"

namespace dbgl::model {

namespace d = diff;

nlohmann::json checkpoint_json(const Model& model, const DataContext& context) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : model.parameters()) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  nlohmann::json norm = nullptr;
  if (context.norm) norm = {{"mean", context.norm->mean}, {"stddev", context.norm->stddev}};
  return {{"format", "dbgl-checkpoint"},
          {"version", kCheckpointVersion},
          {"config", model.config()},
          {"flags", model.flags()},
          {"num_variables", model.num_variables()},
          {"variables", context.variables},
          {"t_max", context.t_max},
          {"normalization", norm},
          {"parameters", params}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dbgl-checkpoint") throw ParseError("not a dbgl checkpoint");
    if (j.at("version") != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version " + j.at("version").dump());
    Model model(j.at("config").get<ModelConfig>(), j.at("flags").get<AblationFlags>(),
                j.at("num_variables").get<std::size_t>());
    const auto params = model.parameters();
    const auto& stored = j.at("parameters");
    if (stored.size() != params.size())
      throw ParseError("checkpoint holds " + std::to_string(stored.size()) +
                       " parameter blocks, expected " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = stored[i];
      const std::string name = entry.at("name");
      Tensor t = params[i].second;
      if (name != params[i].first)
        throw ParseError("checkpoint block " + std::to_string(i) + " is '" + name +
                         "', expected '" + params[i].first + "'");
      if (entry.at("shape").get<d::Shape>() != t.shape())
        throw ParseError("checkpoint block '" + name + "' has the wrong shape");
      const auto values = entry.at("data").get<std::vector<double>>();
      if (values.size() != t.numel())
        throw ParseError("checkpoint block '" + name + "' has the wrong size");
      std::ranges::copy(values, t.mutable_data().begin());
    }
    DataContext ctx;
    ctx.variables = j.at("variables").get<std::vector<std::string>>();
    ctx.t_max = j.at("t_max").get<double>();
    if (!j.at("normalization").is_null()) {
      ctx.norm = data::NormStats{j["normalization"].at("mean").get<std::vector<double>>(),
                                 j["normalization"].at("stddev").get<std::vector<double>>()};
    }
    return {std::move(model), std::move(ctx)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const DataContext& context) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << checkpoint_json(model, context).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace dbgl::model
