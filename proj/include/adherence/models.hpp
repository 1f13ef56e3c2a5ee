#pragma once

// Either trained model behind one handle, plus artifact save/load.

#include <filesystem>
#include <string>
#include <variant>

#include <json.hpp>

#include "adherence/lstm.hpp"
#include "adherence/slvm.hpp"

namespace adherence {

enum class ModelKind { Slvm, Lstm };

std::string to_string(ModelKind kind);
/// Accepts "slvm" or "lstm"; throws ValidationError otherwise.
ModelKind parse_model_kind(const std::string& name);

using AnyModel = std::variant<slvm::SlvmModel, lstm::LstmModel>;

ModelKind kind_of(const AnyModel& model);
const CohortSchema& schema_of(const AnyModel& model);
const NormalizationStats& stats_of(const AnyModel& model);
double threshold_of(const AnyModel& model);

/// Throws SchemaError when the model was trained on a different layout.
void check_compatible(const AnyModel& model, const CohortSchema& schema);

struct LoadedModel {
  AnyModel model;
  nlohmann::json manifest;
};

/// `run_config` is embedded with its SHA-256 so artifacts trace back to it.
std::string model_bytes(const AnyModel& model, const nlohmann::json& run_config);
void save_model(const std::filesystem::path& path, const AnyModel& model, const nlohmann::json& run_config);
LoadedModel load_model(const std::filesystem::path& path);
LoadedModel parse_model(const std::string& bytes);

}  // namespace adherence
