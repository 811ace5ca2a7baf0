#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "mmfuse/neural/mlp.hpp"

namespace mmfuse::neural {

// Container layout, all integers little-endian:
//   8 bytes  magic "MMFMODEL"
//   u32      format version (1)
//   u64      header length N
//   N bytes  JSON header {"format_version", "spec", "tensors":[{name,rows,cols}], "metadata"}
//   f64...   tensor values in header order, each column-major
inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const MlpModel& model, const nlohmann::json& metadata);

struct LoadedModel {
    MlpModel model;
    nlohmann::json metadata;
};

LoadedModel deserialize_model(std::string_view bytes);

void save_model(const MlpModel& model, const nlohmann::json& metadata, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace mmfuse::neural
