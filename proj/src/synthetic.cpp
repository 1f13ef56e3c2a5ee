#include "adherence/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace adherence {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Cohort synthetic_cohort(const SyntheticOptions& options) {
  Rng rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Cohort cohort;
  cohort.schema = CohortSchema::release();
  for (int n = 0; n < options.patients; ++n) {
    PatientRecord r;
    r.id = fmt::format("S{:04d}", n + 1);
    r.s = Vector::Zero(kStaticDim);
    r.s(0) = std::clamp(32.0 + 11.0 * normal(rng), 8.0, 70.0);
    r.s(1) = uniform(rng) < 0.5 ? 1.0 : 0.0;
    r.s(2) = std::exp(2.8 + 0.8 * normal(rng));
    r.s(3) = std::clamp(0.08 + 0.05 * normal(rng), 0.0, 1.0);
    r.s(4) = std::max(0.0, 0.35 + 0.2 * normal(rng));
    r.s(5) = std::max(0.0, 4.0 + 2.5 * normal(rng));
    for (int k = 6; k < kStaticDim; ++k) r.s(k) = normal(rng);

    const double severity = 5.5 + 1.3 * normal(rng) + 0.4 * r.s(8);
    const double response = std::max(0.0, 0.55 + 0.2 * normal(rng));
    Vector offset(kScoreDim);
    for (int d = 0; d < kScoreDim; ++d) offset(d) = 0.8 * normal(rng) - (d >= 6 && d < 10 ? 1.5 : 0.0);

    // Everyone completes the first interval; afterwards one absorbing
    // discontinuation hazard per interval.
    int on = 1;
    for (int t = 0; t < kIntervals; ++t) {
      if (t > 0 && on == 1) {
        const double logit = -2.6 + options.distance_effect * (r.s(2) - 20.0) / 10.0 + 0.6 * r.s(3) * 10.0 - 0.3 * (t - 1) +
                             0.25 * normal(rng);
        if (uniform(rng) < sigmoid(logit)) on = 0;
      }
      r.y[static_cast<size_t>(t)] = on;
      r.a[static_cast<size_t>(t)] = on;
    }
    if (r.withdrawal_interval() < kIntervals) r.withdrawal_reason = "synthetic";

    r.x = Matrix::Zero(kSteps, kScoreDim);
    double benefit = 0.0;
    for (int t = 0; t < kSteps; ++t) {
      if (t > 0) {
        const int a = r.a[static_cast<size_t>(t - 1)];
        const double months = kVisitMonths[static_cast<size_t>(t)] - kVisitMonths[static_cast<size_t>(t - 1)];
        benefit = a == 1 ? benefit + response * months / 12.0 : 0.7 * benefit;
      }
      for (int d = 0; d < kScoreDim - 1; ++d) {
        r.x(t, d) = std::clamp(severity + offset(d) - 1.6 * benefit + 0.9 * normal(rng), 0.0, 10.0);
      }
      r.x(t, kScoreDim - 1) = std::max(0.0, 2.0 + 0.5 * severity - 1.2 * benefit + 0.8 * normal(rng));
      r.mask[static_cast<size_t>(t)] = t == 0 || uniform(rng) >= options.missing_rate;
      if (!r.mask[static_cast<size_t>(t)]) r.x.row(t).setZero();
    }
    cohort.records.push_back(std::move(r));
  }
  validate_cohort(cohort);
  return cohort;
}

}  // namespace adherence
