#pragma once

// Evaluation protocols, metrics and report files.
//
// Every metric row is keyed by (model, protocol, fold, start, step, metric,
// dim). `start` is the last observed visit t; `step` is the interval being
// predicted, so adherence refers to y_step and scores to x_{step+1}. For the
// one-step protocol start == step.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adherence/dataset.hpp"
#include "adherence/models.hpp"

namespace adherence::eval {

struct RmseResult {
  Vector per_dim;
  double aggregate = 0.0;  // pooled over all dims
  int count = 0;           // rows used
};

/// Raw-unit RMSE over rows where mask is true. Throws ValidationError on an
/// empty mask and DimensionError on shape mismatches.
RmseResult rmse(const Matrix& pred, const Matrix& target, const std::vector<bool>& mask);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0, tn = 0;
  // Set when the denominator was zero; the value is then reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

/// Positive class defaults to continuation (label 1). A probability at or
/// above the threshold predicts the positive class.
ClassificationMetrics classification_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                             double threshold = 0.5, int positive = 1);

enum class Protocol { OneStep, Rollout };
std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

/// One model output for one patient at one (start, step).
struct PredictionRecord {
  std::string patient;
  int fold = 0;
  int start = 0;
  int step = 0;
  double probability = 0.0;
  std::vector<double> probability_samples;  // empty for deterministic models
  int label = 0;
  Vector score;          // raw x_{step+1}
  Matrix score_samples;  // K x score_dim, empty for deterministic models
  Vector target;
  bool observed = false;
};

/// Runs every fold model over the test patients. One-step covers t = 1..5;
/// rollout covers every (start t, step u >= t). Deterministic under `seed`.
std::vector<PredictionRecord> run_protocol(const std::vector<AnyModel>& fold_models, const Cohort& cohort,
                                           const std::vector<std::string>& test_ids, Protocol protocol, int samples,
                                           unsigned long long seed);

struct MetricRow {
  std::string model;
  std::string protocol;
  std::string fold;  // fold index, or "aggregate"
  int start = 0;
  int step = 0;
  std::string metric;  // accuracy, precision, recall, f1, rmse
  std::string dim;     // score column for per-dim rmse, "all" otherwise
  double mean = 0.0;   // value for fold rows, mean over folds for aggregate rows
  double std = 0.0;    // 0 for fold rows, population std over folds otherwise
  double sample_std = 0.0;  // spread of the metric across latent samples
  int count = 0;            // predictions scored (summed over folds)
  bool undefined = false;   // a zero-division convention was used

  bool operator==(const MetricRow&) const = default;
};

using MetricTable = std::vector<MetricRow>;

inline constexpr const char* kAggregateFold = "aggregate";

/// Per-fold rows followed by aggregate rows, sorted by key.
MetricTable metric_table(const std::vector<PredictionRecord>& records, const std::string& model,
                         Protocol protocol, const CohortSchema& schema, double threshold);

struct BaselineSpec {
  Vector lower;  // per score dim
  Vector upper;
  unsigned long long seed = 0;

  /// Schema bounds where finite, else [0 or observed min, observed max].
  static BaselineSpec from_cohort(const Cohort& cohort, unsigned long long seed);
};

/// Uniform scores over the support and adherence uniform on {0, 1}, scored
/// with the one-step layout over `ids`, one fold.
std::vector<PredictionRecord> random_baseline(const BaselineSpec& spec, const Cohort& cohort,
                                              const std::vector<std::string>& ids);

inline constexpr const char* kMetricColumns =
    "model,protocol,fold,start,step,metric,dim,mean,std,sample_std,count,undefined";

std::string metric_csv(const MetricTable& table);
MetricTable parse_metric_csv(const std::string& text);

/// Counts over [lower, upper] in equal bins; the last bin is closed.
std::vector<int> histogram(const std::vector<double>& values, double lower, double upper, int bins);

/// Long format: dim,visit,bin_lower,bin_upper,count over observed scores.
std::string histogram_csv(const Cohort& cohort, int bins = 10);

/// Writes metrics.csv, rmse_long.csv, classification_long.csv and
/// score_histograms.csv under `dir`.
void emit_report(const MetricTable& table, const Cohort& cohort, const std::filesystem::path& dir);

/// Looks up one row; nullopt when absent.
std::optional<MetricRow> find_row(const MetricTable& table, const std::string& model, const std::string& protocol,
                                  const std::string& fold, int start, int step, const std::string& metric,
                                  const std::string& dim = "all");

/// Threshold on aggregate rows, written `model/protocol/metric/step OP value`
/// where step is a number or `all`, e.g. `slvm/one-step/rmse/all<4.55`.
struct Requirement {
  std::string model, protocol, metric;
  int step = 0;  // 0 = every step
  std::string op;
  double value = 0.0;
  std::string text;

  static Requirement parse(const std::string& text);
};

/// Descriptions of every violating row; a requirement matching no row fails.
std::vector<std::string> check_requirement(const MetricTable& table, const Requirement& req);

}  // namespace adherence::eval
