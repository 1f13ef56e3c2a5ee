#pragma once

// Autoregressive LSTM comparator: (x_{t+1}, y_t) = f(x_{1:t}, y_{1:t-1}, s).
// Step t consumes [x_t, y_{t-1}, s] with y_0 = 1.

#include <vector>

#include <json.hpp>

#include "adherence/dataset.hpp"
#include "adherence/nn/layers.hpp"
#include "adherence/training.hpp"

namespace adherence::lstm {

using nn::Parameter;
using nn::Tape;
using nn::Var;

struct LstmConfig {
  int static_dim = kStaticDim;
  int score_dim = kScoreDim;
  Eigen::Index hidden = 128;
  int layers = 2;
  double threshold = 0.5;

  [[nodiscard]] Eigen::Index input_dim() const { return score_dim + 1 + static_dim; }
  [[nodiscard]] nlohmann::json to_json() const;
  static LstmConfig from_json(const nlohmann::json& j);
};

class LstmModel {
 public:
  LstmModel() = default;
  explicit LstmModel(LstmConfig config);

  void init(nn::Rng& rng);
  std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<const Parameter*> parameters() const;
  [[nodiscard]] const LstmConfig& config() const { return config_; }

  nn::LstmStack stack;
  nn::Linear score_head;
  nn::Linear adherence_head;

  NormalizationStats stats;
  CohortSchema schema;
  /// Per-dim variance of normalized training targets x_2..x_6 (NMSE scale).
  Vector target_variance;

 private:
  LstmConfig config_;
};

/// Mean over rows and dims of (pred - target)^2 / variance.
double nmse(const Matrix& pred, const Matrix& target, const Vector& variance);
/// Population variance per column.
Vector column_variance(const Matrix& targets);
/// Observed x_2..x_6 of a normalized batch, stacked.
Vector target_variance(const SequenceBatch& normalized);

struct StepOutputs {
  std::vector<Var> score;      // per step t = 1..5: B x score_dim, normalized x_{t+1}
  std::vector<Var> adherence;  // per step t = 1..5: B x 1
};

/// Teacher-forced unroll over all five steps of a normalized batch.
StepOutputs unroll(Tape& tape, const LstmModel& m, const SequenceBatch& batch, const nn::ForwardMode& mode);

struct LossVars {
  Var loss;  // 1x1
  Var nmse;  // 1x1, summed over valid steps, mean over rows
  Var bce;   // 1x1, summed over steps, mean over rows
};
LossVars loss_terms(Tape& tape, const LstmModel& m, const SequenceBatch& batch, const nn::ForwardMode& mode);

struct StepMetrics {
  double loss = 0.0;
  double nmse = 0.0;
  double bce = 0.0;
  double grad_norm = 0.0;
};

/// Throws NumericError (listing batch ids) on a non-finite loss.
StepMetrics train_step(LstmModel& m, const SequenceBatch& batch, nn::Radam& optimizer, const TrainConfig& config,
                       nn::Rng& rng);

struct EpochRecord {
  int epoch = 0;
  StepMetrics last_step;
  double validation = 0.0;  // nmse + bce
};

struct FitResult {
  LstmModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

FitResult fit(const Cohort& cohort, const std::vector<std::string>& train_ids,
              const std::vector<std::string>& validation_ids, const LstmConfig& model_config,
              const TrainConfig& config);

struct Prediction {
  Vector next_score;  // raw x_{t+1}
  double adherence = 0.0;
};

/// History in raw units: x_hist is t x score_dim, y_hist has t-1 labels.
Prediction forward(const LstmModel& m, const Matrix& x_hist, const std::vector<int>& y_hist, const Vector& s);
/// Record view of forward(): uses visits 1..t and labels 1..t-1.
Prediction forward(const LstmModel& m, const PatientRecord& record, int t);

struct Trajectory {
  int start_step = 0;
  std::vector<Vector> scores;     // raw x_{t+1..6}
  std::vector<double> adherence;  // y_{t..5} probabilities
  std::vector<int> fed_back;      // binarized y_{t..5}, absorbing
};

Trajectory rollout(const LstmModel& m, const Matrix& x_hist, const std::vector<int>& y_hist, const Vector& s);
Trajectory rollout(const LstmModel& m, const PatientRecord& record, int t);

nlohmann::json manifest_fields(const LstmModel& m);
LstmModel model_from_manifest(const nlohmann::json& manifest);

}  // namespace adherence::lstm
