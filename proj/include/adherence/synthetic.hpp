#pragma once

// Synthetic immunotherapy-like cohort with the release layout. Used for
// demos, smoke runs and tests; not a substitute for real data.

#include "adherence/dataset.hpp"

namespace adherence {

struct SyntheticOptions {
  int patients = 205;
  unsigned long long seed = 0;
  /// Log-odds increase of discontinuing per 10 km of travel distance.
  double distance_effect = 0.35;
  /// Probability that a post-baseline visit is missing.
  double missing_rate = 0.03;
};

/// Deterministic in `options.seed`. Ids are S0001, S0002, ...
Cohort synthetic_cohort(const SyntheticOptions& options);

}  // namespace adherence
