#include "adherence/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence::attribution {

using nn::Tape;
using nn::Var;

Target Target::parse(const std::string& text) {
  if (text == "mean") return {};
  if (text.rfind("step:", 0) == 0) {
    try {
      size_t used = 0;
      const int t = std::stoi(text.substr(5), &used);
      if (used == text.size() - 5 && t >= 1 && t <= kIntervals) return {t};
    } catch (const std::logic_error&) {
    }
  }
  throw ValidationError("unknown attribution target '" + text + "' (expected mean or step:1..step:5)");
}

std::string Target::to_string() const { return step == 0 ? "mean" : fmt::format("step:{}", step); }

AttributionResult integrated_gradients(const Objective& f, const Vector& input, const Vector& baseline, int steps) {
  if (steps < 8) throw ValidationError("integrated_gradients: need at least 8 path steps");
  if (input.size() != baseline.size()) throw DimensionError("integrated_gradients: input and baseline differ");
  const Vector delta = input - baseline;
  Vector grad_sum = Vector::Zero(input.size());
  for (int k = 1; k <= steps; ++k) {
    const double alpha = (k - 0.5) / steps;
    const auto [value, grad] = f(baseline + alpha * delta);
    if (grad.size() != input.size()) throw DimensionError("integrated_gradients: objective gradient size");
    grad_sum += grad;
  }
  AttributionResult out;
  out.attributions = delta.cwiseProduct(grad_sum / steps);
  out.input = input;
  out.baseline = baseline;
  out.steps = steps;
  out.f_input = f(input).first;
  out.f_baseline = f(baseline).first;
  out.residual = std::abs(out.attributions.sum() - (out.f_input - out.f_baseline));
  return out;
}

Objective adherence_objective(const slvm::SlvmModel& m, const PatientRecord& record, const Options& options) {
  if (options.samples < 1) throw ValidationError("attribution: samples must be positive");
  if (options.target.step < 0 || options.target.step > kIntervals) {
    throw ValidationError("attribution: target step out of range");
  }
  PatientRecord norm = normalize(record, m.stats);
  return [&m, norm = std::move(norm), options](const Vector& s) {
    if (s.size() != m.config().static_dim) throw DimensionError("attribution: static input size");
    Tape tape(false);
    nn::Rng rng(options.seed);
    const auto rows = static_cast<Eigen::Index>(options.samples);
    Var s_rows = tape.input(s.transpose().replicate(rows, 1));
    const auto chain = slvm::filter_chain(tape, m, norm, s_rows, kIntervals, rng);
    const nn::ForwardMode eval;
    std::vector<Var> probs;
    for (int t = 1; t <= kIntervals; ++t) {
      if (options.target.step != 0 && options.target.step != t) continue;
      probs.push_back(slvm::adherence_prob(tape, m, chain[static_cast<size_t>(t - 1)], eval));
    }
    Var total = probs[0];
    for (size_t i = 1; i < probs.size(); ++i) total = nn::add(total, probs[i]);
    Var f = nn::scale(nn::sum(total), 1.0 / static_cast<double>(rows * static_cast<Eigen::Index>(probs.size())));
    tape.backward(f);
    const Vector grad = tape.grad(s_rows).colwise().sum().transpose();
    return std::make_pair(f.value()(0, 0), grad);
  };
}

AttributionResult explain(const slvm::SlvmModel& m, const PatientRecord& record, const Options& options) {
  const Vector input = m.stats.normalize_static(record.s);
  AttributionResult out =
      integrated_gradients(adherence_objective(m, record, options), input, Vector::Zero(input.size()), options.steps);
  out.patient = record.id;
  return out;
}

std::vector<FeatureImportance> rank_features(const std::vector<AttributionResult>& results,
                                             const std::vector<std::string>& names) {
  if (results.empty()) throw ValidationError("rank_features: no attribution results");
  const auto d = static_cast<Eigen::Index>(names.size());
  Matrix abs(static_cast<Eigen::Index>(results.size()), d);
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i].attributions.size() != d) throw DimensionError("rank_features: attribution size");
    abs.row(static_cast<Eigen::Index>(i)) = results[i].attributions.cwiseAbs().transpose();
  }
  std::vector<FeatureImportance> table;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double mean = abs.col(j).mean();
    const double var = (abs.col(j).array() - mean).square().mean();
    table.push_back({names[static_cast<size_t>(j)], mean, std::sqrt(var), 0});
  }
  std::stable_sort(table.begin(), table.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  for (size_t i = 0; i < table.size(); ++i) table[i].rank = static_cast<int>(i) + 1;
  return table;
}

std::string importance_csv(const std::vector<FeatureImportance>& table) {
  std::string out = "feature,mean,std,rank\n";
  for (const auto& r : table) {
    out += fmt::format("{},{},{},{}\n", csv_escape(r.feature), format_number(r.mean), format_number(r.std), r.rank);
  }
  return out;
}

}  // namespace adherence::attribution
