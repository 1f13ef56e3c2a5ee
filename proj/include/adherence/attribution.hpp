#pragma once

// Integrated gradients over the normalized static features.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adherence/slvm.hpp"

namespace adherence::attribution {

/// Which adherence output is explained: the mean probability over intervals
/// 1..5, or a single interval.
struct Target {
  int step = 0;  // 0 = mean over all intervals

  /// "mean" or "step:<t>" with t in 1..5; throws ValidationError otherwise.
  static Target parse(const std::string& text);
  [[nodiscard]] std::string to_string() const;
};

struct Options {
  int steps = 64;    // path points m (midpoint rule)
  int samples = 16;  // frozen latent samples averaged inside F
  unsigned long long seed = 0;
  Target target;
};

/// F and its gradient at one input.
using Objective = std::function<std::pair<double, Vector>(const Vector&)>;

struct AttributionResult {
  std::string patient;
  Vector attributions;
  Vector input;
  Vector baseline;
  int steps = 0;
  double f_input = 0.0;
  double f_baseline = 0.0;
  /// |sum(attributions) - (F(input) - F(baseline))|
  double residual = 0.0;
};

/// IG_i = (x_i - b_i) * mean_k dF/dx_i at b + (k - 1/2)/m (x - b).
AttributionResult integrated_gradients(const Objective& f, const Vector& input, const Vector& baseline, int steps);

/// Mean adherence probability of `record` as a function of its normalized
/// statics, with the latent noise replayed from `seed` on every call.
Objective adherence_objective(const slvm::SlvmModel& m, const PatientRecord& record, const Options& options);

/// Explains one raw record against the all-zeros (training mean) baseline.
AttributionResult explain(const slvm::SlvmModel& m, const PatientRecord& record, const Options& options);

struct FeatureImportance {
  std::string feature;
  double mean = 0.0;  // mean |attribution| across results
  double std = 0.0;   // population std of |attribution|
  int rank = 0;       // 1 = most important
};

std::vector<FeatureImportance> rank_features(const std::vector<AttributionResult>& results,
                                             const std::vector<std::string>& names);

std::string importance_csv(const std::vector<FeatureImportance>& table);

}  // namespace adherence::attribution
