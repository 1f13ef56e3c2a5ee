#pragma once

// Two-level sequential latent variable model.
//
// Inference:  z1_1 ~ q(z1_1 | x_1, s)          z2_1 ~ p(z2_1 | z1_1)
//             z1_t+1 ~ q(z1 | x_t+1, z2_t, a_t) z2_t+1 ~ p(z2 | z1_t+1, z2_t, a_t)
// Generation: z1_1 ~ N(0, I)                    z2_1 ~ p(z2_1 | z1_1)
//             z1_t+1 ~ p(z1 | z2_t, a_t)        z2_t+1 ~ p(z2 | z1_t+1, z2_t, a_t)
//             x_t ~ p(x | z1_t, z2_t)           y_t ~ Bernoulli(p(y | z1_t, z2_t))
//
// The z2 transition is one parameter block shared by both paths. Steps are
// 1-based in the public API (visit 1..6, interval 1..5), matching the
// clinical timeline; arrays are 0-based internally.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adherence/dataset.hpp"
#include "adherence/nn/layers.hpp"
#include "adherence/nn/optim.hpp"
#include "adherence/training.hpp"

namespace adherence::slvm {

using nn::Parameter;
using nn::Tape;
using nn::Var;
using adherence::LagrangeConfig;
using adherence::TrainConfig;

struct SlvmConfig {
  int static_dim = kStaticDim;
  int score_dim = kScoreDim;
  int latent1 = 32;
  int latent2 = 32;
  std::vector<Eigen::Index> hidden{128, 128, 128, 128, 128};
  double threshold = 0.5;

  [[nodiscard]] nlohmann::json to_json() const;
  static SlvmConfig from_json(const nlohmann::json& j);
};

class SlvmModel {
 public:
  SlvmModel() = default;
  explicit SlvmModel(SlvmConfig config);

  void init(nn::Rng& rng);
  /// Stable order; used by the optimizer and the artifact payload.
  std::vector<Parameter*> parameters();
  [[nodiscard]] std::vector<const Parameter*> parameters() const;

  [[nodiscard]] const SlvmConfig& config() const { return config_; }

  nn::GaussianNet posterior_init;   // q(z1_1 | x_1, s)
  nn::GaussianNet posterior_trans;  // q(z1_t+1 | x_t+1, z2_t, a_t)
  nn::GaussianNet prior_trans;      // p(z1_t+1 | z2_t, a_t)
  nn::GaussianNet z2_init;          // p(z2_1 | z1_1)
  nn::GaussianNet z2_trans;         // p(z2_t+1 | z1_t+1, z2_t, a_t), shared
  nn::GaussianNet decoder;          // p(x_t | z1_t, z2_t)
  nn::BernoulliNet adherence;       // p(y_t | z1_t, z2_t)

  /// Frozen normalization snapshot from the training set.
  NormalizationStats stats;
  CohortSchema schema;

 private:
  SlvmConfig config_;
};

/// One time step of the latent chain, batched over rows.
struct LatentStep {
  nn::GaussianVars z1_dist;
  Var z1;
  nn::GaussianVars z2_dist;
  Var z2;
};

/// Plain-value view of one LatentStep for a single row.
struct LatentState {
  int step = 0;  // 1-based visit index
  Vector z1, z1_mean, z1_std;
  Vector z2, z2_mean, z2_std;
};

// Building blocks on the tape. `a` is (B x 1). Noise comes from `rng`, so
// re-seeding reproduces a chain exactly (common random numbers).
LatentStep initial_posterior(Tape& tape, const SlvmModel& m, Var x, Var s, const nn::ForwardMode& mode,
                             nn::Rng& rng);
LatentStep initial_prior(Tape& tape, const SlvmModel& m, Eigen::Index rows, const nn::ForwardMode& mode,
                         nn::Rng& rng);
LatentStep transition_posterior(Tape& tape, const SlvmModel& m, const LatentStep& prev, Var x, Var a,
                                const nn::ForwardMode& mode, nn::Rng& rng);
LatentStep transition_prior(Tape& tape, const SlvmModel& m, const LatentStep& prev, Var a,
                            const nn::ForwardMode& mode, nn::Rng& rng);
nn::GaussianVars decode_scores(Tape& tape, const SlvmModel& m, const LatentStep& step, const nn::ForwardMode& mode);
Var adherence_prob(Tape& tape, const SlvmModel& m, const LatentStep& step, const nn::ForwardMode& mode);

struct ElboVars {
  Var kl;             // 1x1, mean over rows
  Var score_nll;      // 1x1, mean over rows
  Var adherence_nll;  // 1x1, mean over rows
  Matrix kl_rows;     // B x 1, per patient
};

/// Single-sample reparameterized ELBO pieces over a normalized batch.
/// Visits with mask 0 use the prior transition and contribute no KL or NLL.
ElboVars elbo_terms(Tape& tape, const SlvmModel& m, const SequenceBatch& batch, const nn::ForwardMode& mode,
                    nn::Rng& rng);

struct ElboValues {
  double kl = 0.0;
  double score_nll = 0.0;
  double adherence_nll = 0.0;
};
ElboValues elbo_values(const SlvmModel& m, const SequenceBatch& batch, nn::Rng& rng);

/// Filters visits 1..t of a normalized record; `s` is (rows x static_dim) and
/// may be a tracked input so gradients w.r.t. the statics can be read back.
std::vector<LatentStep> filter_chain(Tape& tape, const SlvmModel& m, const PatientRecord& norm, Var s, int t,
                                     nn::Rng& rng);

/// Filters visits 1..t of one raw record with a single latent sample.
std::vector<LatentState> filter_posterior(const SlvmModel& m, const PatientRecord& record, int t, nn::Rng& rng);

// ---------------------------------------------------------------------------
// Constrained training

struct LagrangeState {
  double lambda_score = 1.0;
  double lambda_adherence = 1.0;
  double xi_score = 0.0;
  double xi_adherence = 0.0;
  double ma_score = 0.0;
  double ma_adherence = 0.0;
  bool ma_initialized = false;
};

/// Multiplicative update from the violation moving averages, clamped.
void update_lagrange(LagrangeState& state, const LagrangeConfig& config, double score_nll, double adherence_nll);

/// Constant-predictor calibration of the constraint targets on a normalized
/// batch: unit-variance Gaussian at the mean, BCE of the pooled base rate.
std::pair<double, double> calibrate_targets(const SequenceBatch& normalized_train, double factor);

struct StepMetrics {
  double loss = 0.0;
  double kl = 0.0;
  double score_nll = 0.0;
  double adherence_nll = 0.0;
  double lambda_score = 0.0;
  double lambda_adherence = 0.0;
  double grad_norm = 0.0;
};

/// Full constrained objective on the tape (used by training and grad checks).
Var constrained_loss(Tape& tape, const SlvmModel& m, const LagrangeState& lagrange, const SequenceBatch& batch,
                     const nn::ForwardMode& mode, nn::Rng& rng, ElboVars* terms = nullptr);

/// One clipped RAdam step plus the multiplier update. Throws NumericError
/// (listing the batch ids) and leaves everything untouched on a non-finite loss.
StepMetrics train_step(SlvmModel& m, LagrangeState& lagrange, const SequenceBatch& batch, nn::Radam& optimizer,
                       const TrainConfig& config, nn::Rng& rng);

struct EpochRecord {
  int epoch = 0;
  StepMetrics last_step;
  double validation = 0.0;  // score_nll + adherence_nll
};

struct FitResult {
  SlvmModel model;
  LagrangeState lagrange;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// Trains on `train_ids` (normalization fitted on them), early stopping on
/// `validation_ids` when nonempty.
FitResult fit(const Cohort& cohort, const std::vector<std::string>& train_ids,
              const std::vector<std::string>& validation_ids, const SlvmConfig& model_config,
              const TrainConfig& config);

// ---------------------------------------------------------------------------
// Prediction

enum class Provenance { Filtered, PriorRollout };
std::string to_string(Provenance p);

/// Score distribution at one visit in raw units, aggregated over K samples.
struct ScoreDistribution {
  int step = 0;    // 1-based visit
  Vector mean;     // mean of the per-sample decoder means
  Vector std;      // predictive std (latent spread plus decoder noise)
  Matrix samples;  // K x score_dim decoder means
  Provenance provenance = Provenance::PriorRollout;
};

struct AdherencePrediction {
  int step = 0;              // 1-based interval
  double probability = 0.0;  // mean over samples
  Vector samples;            // K per-sample probabilities
  Provenance provenance = Provenance::Filtered;
};

struct OneStepPrediction {
  ScoreDistribution next_score;  // x_{t+1}
  AdherencePrediction adherence;  // y_t
};

/// Observes x_1..x_t and a_1..a_{t-1}; returns y_t and x_{t+1} (using the
/// recorded a_t). 1 <= t <= 5.
OneStepPrediction predict_one_step(const SlvmModel& m, const PatientRecord& record, int t, int samples,
                                   nn::Rng& rng);

struct ActionPlan {
  enum class Mode { Inferred, Fixed } mode = Mode::Inferred;
  std::vector<int> fixed;  // a_t..a_5 when Mode::Fixed

  static ActionPlan inferred() { return {}; }
  static ActionPlan fixed_suffix(std::vector<int> actions) { return {Mode::Fixed, std::move(actions)}; }
};

struct PredictionTrajectory {
  int start_step = 0;
  int samples = 0;
  std::vector<ScoreDistribution> scores;         // visits t+1..6
  std::vector<AdherencePrediction> adherence;    // intervals t..5
  Matrix actions;                                // K x (6 - t), actions fed per sample
};

/// Throws ValidationError if a fixed plan breaks absorption (including a
/// 1 after an observed a_{t-1} = 0) or has the wrong length.
void validate_plan(const ActionPlan& plan, const PatientRecord& record, int t);

PredictionTrajectory rollout(const SlvmModel& m, const PatientRecord& record, int t, const ActionPlan& plan,
                             int samples, nn::Rng& rng);

struct InterventionResult {
  std::vector<PredictionTrajectory> trajectories;
  /// delta[i][j]: mean over samples and dims of x6(i) - x6(j), raw units.
  std::vector<std::vector<double>> delta;
  /// Same in normalized units.
  std::vector<std::vector<double>> delta_normalized;
};

/// Every scenario replays the same noise (common random numbers).
InterventionResult simulate_interventions(const SlvmModel& m, const PatientRecord& record, int t,
                                          const std::vector<std::vector<int>>& scenarios, int samples,
                                          unsigned long long seed);

// ---------------------------------------------------------------------------
// Artifact

nlohmann::json manifest_fields(const SlvmModel& m);
SlvmModel model_from_manifest(const nlohmann::json& manifest);

}  // namespace adherence::slvm
