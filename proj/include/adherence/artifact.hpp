#pragma once

// Model artifact file:
//
//   ADHERENCE-MODEL 1\n
//   <manifest byte length>\n
//   <manifest JSON, keys sorted>
//   <payload: little-endian float64, parameters in manifest order, column-major>
//
// Nothing time-dependent is written, so identical inputs give identical bytes.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "adherence/dataset.hpp"
#include "adherence/nn/tape.hpp"

namespace adherence {

inline constexpr const char* kArtifactMagic = "ADHERENCE-MODEL 1";

struct Artifact {
  nlohmann::json manifest;  // includes "parameters": [{name, rows, cols}]
  std::vector<nn::Parameter> parameters;

  [[nodiscard]] const nn::Parameter& parameter(const std::string& name) const;
};

std::string serialize_artifact(nlohmann::json manifest, const std::vector<const nn::Parameter*>& params);
Artifact deserialize_artifact(const std::string& bytes);
void save_artifact(const std::filesystem::path& path, const nlohmann::json& manifest,
                   const std::vector<const nn::Parameter*>& params);
Artifact load_artifact(const std::filesystem::path& path);

/// Copies values into `params` by name; shapes must match exactly.
void restore_parameters(const Artifact& artifact, const std::vector<nn::Parameter*>& params);

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
/// SHA-256 of the compact, key-sorted dump.
std::string config_hash(const nlohmann::json& config);

nlohmann::json to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CohortSchema& schema);
CohortSchema schema_from_json(const nlohmann::json& j);

}  // namespace adherence
