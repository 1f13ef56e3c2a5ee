#pragma once

// Run configuration and the fold-level workflows behind the CLI.
//
// Output directory layout:
//   config.json                 resolved run configuration
//   cohort.csv, splits.csv      canonical cohort and split assignments
//   models/<kind>/fold<i>.model trained artifacts, one per fold
//   models/<kind>/history.csv   per-epoch validation curve
//   report/                     metric and histogram CSVs
//   attribution/                importance table and per-patient attributions
//   simulate/effects.csv        intervention deltas per fold model

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "adherence/attribution.hpp"
#include "adherence/eval.hpp"
#include "adherence/lstm.hpp"
#include "adherence/models.hpp"
#include "adherence/slvm.hpp"
#include "adherence/training.hpp"

namespace adherence {

struct RunConfig {
  std::string dataset;  // cohort CSV
  std::string mapping;  // optional column mapping file
  std::string output = "run";
  std::vector<std::string> models{"slvm", "lstm"};
  bool use_post_withdrawal_scores = true;

  unsigned long long split_seed = 0;
  double test_fraction = 0.2;
  int folds = 5;

  slvm::SlvmConfig slvm;
  lstm::LstmConfig lstm;
  TrainConfig train;

  int samples = 100;  // latent samples K for prediction
  unsigned long long eval_seed = 0;
  int ig_steps = 64;
  int ig_samples = 16;
  std::string ig_target = "mean";

  [[nodiscard]] nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown top-level keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// to_json() without the output directory: what artifacts embed and hash.
  [[nodiscard]] nlohmann::json content_json() const;
  [[nodiscard]] std::string hash() const;
};

/// Loads the configured dataset and applies the withdrawal policy.
Cohort load_run_cohort(const RunConfig& config);

struct Workspace {
  RunConfig config;
  Cohort cohort;
  SplitSpec splits;
};

/// Writes config.json, cohort.csv and splits.csv under config.output.
Workspace ingest(const RunConfig& config, const Cohort& cohort);
/// Reads a workspace written by ingest().
Workspace open_workspace(const std::filesystem::path& dir);

std::filesystem::path model_path(const std::filesystem::path& dir, ModelKind kind, int fold);

struct FoldTraining {
  std::vector<AnyModel> models;
  std::vector<int> best_epochs;
  std::string history_csv;
};

/// Fold f trains on every non-test patient outside fold f, validates on
/// fold f and seeds its noise with train.seed + f. Folds run in parallel.
FoldTraining train_folds(const Workspace& ws, ModelKind kind);

/// train_folds() plus artifacts under models/<kind>/.
FoldTraining train_and_save(const Workspace& ws, ModelKind kind);

std::vector<AnyModel> load_fold_models(const std::filesystem::path& dir, ModelKind kind, int folds);

/// One-step and rollout tables for every model kind plus the random
/// baseline, over the test patients.
eval::MetricTable evaluate(const Workspace& ws, const std::vector<std::pair<ModelKind, std::vector<AnyModel>>>& models);

std::vector<attribution::AttributionResult> attribute(const Workspace& ws, const std::vector<AnyModel>& slvm_models);

struct EffectSummary {
  int fold = 0;
  int patients = 0;
  double mean_delta = 0.0;  // mean of x6(first) - x6(second), raw units
  double mean_delta_normalized = 0.0;
};

/// Observes visits 1..prefix and compares two fixed action suffixes for
/// every test patient whose observed actions allow both.
std::vector<EffectSummary> simulate_effects(const Workspace& ws, const std::vector<AnyModel>& slvm_models, int prefix,
                                            const std::vector<int>& first, const std::vector<int>& second);

std::string effects_csv(const std::vector<EffectSummary>& effects);

}  // namespace adherence
