#include "adherence/models.hpp"

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/text.hpp"

#include <fmt/format.h>

namespace adherence {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

std::string to_string(ModelKind kind) { return kind == ModelKind::Slvm ? "slvm" : "lstm"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "slvm") return ModelKind::Slvm;
  if (name == "lstm") return ModelKind::Lstm;
  throw ValidationError("unknown model kind '" + name + "' (expected slvm or lstm)");
}

ModelKind kind_of(const AnyModel& model) {
  return std::holds_alternative<slvm::SlvmModel>(model) ? ModelKind::Slvm : ModelKind::Lstm;
}

const CohortSchema& schema_of(const AnyModel& model) {
  return std::visit([](const auto& m) -> const CohortSchema& { return m.schema; }, model);
}

const NormalizationStats& stats_of(const AnyModel& model) {
  return std::visit([](const auto& m) -> const NormalizationStats& { return m.stats; }, model);
}

double threshold_of(const AnyModel& model) {
  return std::visit([](const auto& m) { return m.config().threshold; }, model);
}

void check_compatible(const AnyModel& model, const CohortSchema& schema) {
  const CohortSchema& own = schema_of(model);
  if (own.static_names != schema.static_names || own.score_names != schema.score_names) {
    throw SchemaError(fmt::format("model expects {} statics / {} scores ({}...), cohort has {} / {}",
                                  own.static_dim(), own.score_dim(), own.score_names.empty() ? "" : own.score_names[0],
                                  schema.static_dim(), schema.score_dim()));
  }
}

std::string model_bytes(const AnyModel& model, const json& run_config) {
  return std::visit(
      [&](const auto& m) {
        json manifest = manifest_fields(m);
        manifest["format_version"] = kFormatVersion;
        manifest["run_config"] = run_config;
        manifest["config_hash"] = config_hash(run_config);
        manifest["threshold"] = m.config().threshold;
        return serialize_artifact(manifest, m.parameters());
      },
      model);
}

void save_model(const std::filesystem::path& path, const AnyModel& model, const json& run_config) {
  write_file(path, model_bytes(model, run_config));
}

LoadedModel parse_model(const std::string& bytes) {
  Artifact art = deserialize_artifact(bytes);
  if (art.manifest.value("format_version", 0) != kFormatVersion) {
    throw SchemaError("unsupported artifact format version");
  }
  const std::string kind = art.manifest.value("model_kind", "");
  LoadedModel out{slvm::SlvmModel{}, art.manifest};
  if (kind == "slvm") {
    slvm::SlvmModel m = slvm::model_from_manifest(art.manifest);
    restore_parameters(art, m.parameters());
    out.model = std::move(m);
  } else if (kind == "lstm") {
    lstm::LstmModel m = lstm::model_from_manifest(art.manifest);
    restore_parameters(art, m.parameters());
    out.model = std::move(m);
  } else {
    throw SchemaError("artifact has unknown model kind '" + kind + "'");
  }
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

}  // namespace adherence
