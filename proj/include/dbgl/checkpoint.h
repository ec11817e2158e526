#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dbgl/data.h"
#include "dbgl/model.h"

namespace dbgl::model {

inline constexpr int kCheckpointVersion = 1;

// Everything needed to apply a trained model to new files: the variable
// schema, the interval horizon and the training normalization.
struct DataContext {
  std::vector<std::string> variables;
  double t_max = 0.0;
  std::optional<data::NormStats> norm;
};

struct Checkpoint {
  Model model;
  DataContext context;
};

nlohmann::json checkpoint_json(const Model& model, const DataContext& context);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const DataContext& context);
// Throws IoError when unreadable and ParseError on a malformed or
// version-mismatched file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dbgl::model
