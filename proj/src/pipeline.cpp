#include "adherence/pipeline.hpp"

#include <future>
#include <set>

#include <fmt/format.h>

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence {

using nlohmann::json;

json RunConfig::to_json() const {
  return {{"dataset", dataset},
          {"mapping", mapping},
          {"output", output},
          {"models", models},
          {"use_post_withdrawal_scores", use_post_withdrawal_scores},
          {"split_seed", split_seed},
          {"test_fraction", test_fraction},
          {"folds", folds},
          {"slvm", slvm.to_json()},
          {"lstm", lstm.to_json()},
          {"train", train.to_json()},
          {"samples", samples},
          {"eval_seed", eval_seed},
          {"ig_steps", ig_steps},
          {"ig_samples", ig_samples},
          {"ig_target", ig_target}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  RunConfig c;
  const json known = c.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("run config: unknown key '" + key + "'");
  }
  try {
    c.dataset = j.value("dataset", c.dataset);
    c.mapping = j.value("mapping", c.mapping);
    c.output = j.value("output", c.output);
    c.models = j.value("models", c.models);
    c.use_post_withdrawal_scores = j.value("use_post_withdrawal_scores", c.use_post_withdrawal_scores);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.folds = j.value("folds", c.folds);
    if (j.contains("slvm")) c.slvm = slvm::SlvmConfig::from_json(j["slvm"]);
    if (j.contains("lstm")) c.lstm = lstm::LstmConfig::from_json(j["lstm"]);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    c.samples = j.value("samples", c.samples);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.ig_steps = j.value("ig_steps", c.ig_steps);
    c.ig_samples = j.value("ig_samples", c.ig_samples);
    c.ig_target = j.value("ig_target", c.ig_target);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  if (c.folds < 2) throw ValidationError("run config: folds must be at least 2");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ValidationError("run config: test_fraction in (0, 1)");
  if (c.samples < 1) throw ValidationError("run config: samples must be positive");
  if (c.ig_steps < 8) throw ValidationError("run config: ig_steps must be at least 8");
  if (c.ig_samples < 1) throw ValidationError("run config: ig_samples must be positive");
  for (const auto& m : c.models) parse_model_kind(m);
  attribution::Target::parse(c.ig_target);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json RunConfig::content_json() const {
  json j = to_json();
  j.erase("output");
  return j;
}

std::string RunConfig::hash() const { return config_hash(content_json()); }

Cohort load_run_cohort(const RunConfig& config) {
  if (config.dataset.empty()) throw ValidationError("run config: no dataset path");
  const ColumnMapping mapping = config.mapping.empty() ? ColumnMapping{} : ColumnMapping::load(config.mapping);
  return apply_withdrawal_policy(load_cohort(config.dataset, mapping), config.use_post_withdrawal_scores);
}

Workspace ingest(const RunConfig& config, const Cohort& cohort) {
  validate_cohort(cohort);
  Workspace ws{config, cohort, make_splits(cohort, config.split_seed, config.test_fraction, config.folds)};
  const std::filesystem::path dir = config.output;
  write_file(dir / "config.json", config.to_json().dump(2) + "\n");
  write_file(dir / "schema.json", to_json(cohort.schema).dump(2) + "\n");
  write_cohort(cohort, dir / "cohort.csv");
  write_splits(ws.splits, dir / "splits.csv");
  return ws;
}

Workspace open_workspace(const std::filesystem::path& dir) {
  Workspace ws;
  ws.config = RunConfig::load(dir / "config.json");
  ws.config.output = dir.string();
  const CohortSchema schema = schema_from_json(json::parse(read_file(dir / "schema.json")));
  ws.cohort = load_cohort(dir / "cohort.csv", {}, schema);
  ws.splits = read_splits(dir / "splits.csv");
  return ws;
}

std::filesystem::path model_path(const std::filesystem::path& dir, ModelKind kind, int fold) {
  return dir / "models" / to_string(kind) / fmt::format("fold{}.model", fold);
}

namespace {

struct FoldOutcome {
  AnyModel model;
  int best_epoch = 0;
  std::vector<std::pair<int, double>> curve;
};

FoldOutcome train_one(const Workspace& ws, ModelKind kind, int fold) {
  TrainConfig tc = ws.config.train;
  tc.seed = ws.config.train.seed + static_cast<unsigned long long>(fold);
  const auto train_ids = ws.splits.train_ids_excluding(fold);
  const auto val_ids = ws.splits.fold_ids(fold);
  FoldOutcome out{slvm::SlvmModel{}, 0, {}};
  if (kind == ModelKind::Slvm) {
    slvm::SlvmConfig mc = ws.config.slvm;
    mc.static_dim = ws.cohort.schema.static_dim();
    mc.score_dim = ws.cohort.schema.score_dim();
    auto fit = slvm::fit(ws.cohort, train_ids, val_ids, mc, tc);
    for (const auto& e : fit.history) out.curve.emplace_back(e.epoch, e.validation);
    out.best_epoch = fit.best_epoch;
    out.model = std::move(fit.model);
  } else {
    lstm::LstmConfig mc = ws.config.lstm;
    mc.static_dim = ws.cohort.schema.static_dim();
    mc.score_dim = ws.cohort.schema.score_dim();
    auto fit = lstm::fit(ws.cohort, train_ids, val_ids, mc, tc);
    for (const auto& e : fit.history) out.curve.emplace_back(e.epoch, e.validation);
    out.best_epoch = fit.best_epoch;
    out.model = std::move(fit.model);
  }
  return out;
}

}  // namespace

FoldTraining train_folds(const Workspace& ws, ModelKind kind) {
  std::vector<std::future<FoldOutcome>> jobs;
  for (int f = 0; f < ws.config.folds; ++f) {
    jobs.push_back(std::async(std::launch::async, [&ws, kind, f] { return train_one(ws, kind, f); }));
  }
  FoldTraining out;
  out.history_csv = "fold,epoch,validation\n";
  for (size_t f = 0; f < jobs.size(); ++f) {
    FoldOutcome r = jobs[f].get();
    for (const auto& [epoch, value] : r.curve) out.history_csv += fmt::format("{},{},{}\n", f, epoch, format_number(value));
    out.best_epochs.push_back(r.best_epoch);
    out.models.push_back(std::move(r.model));
  }
  return out;
}

FoldTraining train_and_save(const Workspace& ws, ModelKind kind) {
  FoldTraining out = train_folds(ws, kind);
  const std::filesystem::path dir = ws.config.output;
  const json config = ws.config.content_json();
  for (size_t f = 0; f < out.models.size(); ++f) {
    save_model(model_path(dir, kind, static_cast<int>(f)), out.models[f], config);
  }
  write_file(dir / "models" / to_string(kind) / "history.csv", out.history_csv);
  return out;
}

std::vector<AnyModel> load_fold_models(const std::filesystem::path& dir, ModelKind kind, int folds) {
  std::vector<AnyModel> out;
  for (int f = 0; f < folds; ++f) {
    LoadedModel loaded = load_model(model_path(dir, kind, f));
    if (kind_of(loaded.model) != kind) throw SchemaError(fmt::format("fold {} artifact holds the wrong model kind", f));
    out.push_back(std::move(loaded.model));
  }
  return out;
}

eval::MetricTable evaluate(const Workspace& ws,
                           const std::vector<std::pair<ModelKind, std::vector<AnyModel>>>& models) {
  const auto test_ids = ws.splits.test_ids();
  eval::MetricTable table;
  for (const auto& [kind, fold_models] : models) {
    if (fold_models.empty()) continue;
    const double threshold = threshold_of(fold_models.front());
    for (auto protocol : {eval::Protocol::OneStep, eval::Protocol::Rollout}) {
      const auto records =
          eval::run_protocol(fold_models, ws.cohort, test_ids, protocol, ws.config.samples, ws.config.eval_seed);
      const auto part = eval::metric_table(records, to_string(kind), protocol, ws.cohort.schema, threshold);
      table.insert(table.end(), part.begin(), part.end());
    }
  }
  const auto baseline = eval::random_baseline(eval::BaselineSpec::from_cohort(ws.cohort, ws.config.eval_seed),
                                              ws.cohort, test_ids);
  const auto part = eval::metric_table(baseline, "random", eval::Protocol::OneStep, ws.cohort.schema, 0.5);
  table.insert(table.end(), part.begin(), part.end());
  return table;
}

std::vector<attribution::AttributionResult> attribute(const Workspace& ws, const std::vector<AnyModel>& slvm_models) {
  attribution::Options opt;
  opt.steps = ws.config.ig_steps;
  opt.samples = ws.config.ig_samples;
  opt.seed = ws.config.eval_seed;
  opt.target = attribution::Target::parse(ws.config.ig_target);
  const auto test_ids = ws.splits.test_ids();
  std::vector<std::future<std::vector<attribution::AttributionResult>>> jobs;
  for (const auto& model : slvm_models) {
    const auto* m = std::get_if<slvm::SlvmModel>(&model);
    if (m == nullptr) throw ValidationError("attribution needs SLVM models");
    check_compatible(model, ws.cohort.schema);
    jobs.push_back(std::async(std::launch::async, [&ws, m, opt, &test_ids] {
      std::vector<attribution::AttributionResult> part;
      for (const auto& id : test_ids) part.push_back(attribution::explain(*m, ws.cohort.by_id(id), opt));
      return part;
    }));
  }
  std::vector<attribution::AttributionResult> out;
  for (auto& job : jobs) {
    auto part = job.get();
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<EffectSummary> simulate_effects(const Workspace& ws, const std::vector<AnyModel>& slvm_models, int prefix,
                                            const std::vector<int>& first, const std::vector<int>& second) {
  std::vector<EffectSummary> out;
  for (size_t f = 0; f < slvm_models.size(); ++f) {
    const auto* m = std::get_if<slvm::SlvmModel>(&slvm_models[f]);
    if (m == nullptr) throw ValidationError("simulation needs SLVM models");
    check_compatible(slvm_models[f], ws.cohort.schema);
    EffectSummary s;
    s.fold = static_cast<int>(f);
    for (const auto& id : ws.splits.test_ids()) {
      const PatientRecord& r = ws.cohort.by_id(id);
      try {
        slvm::validate_plan(slvm::ActionPlan::fixed_suffix(first), r, prefix);
        slvm::validate_plan(slvm::ActionPlan::fixed_suffix(second), r, prefix);
      } catch (const ValidationError&) {
        continue;
      }
      const auto res = slvm::simulate_interventions(*m, r, prefix, {first, second}, ws.config.samples,
                                                    ws.config.eval_seed);
      s.mean_delta += res.delta[0][1];
      s.mean_delta_normalized += res.delta_normalized[0][1];
      ++s.patients;
    }
    if (s.patients > 0) {
      s.mean_delta /= s.patients;
      s.mean_delta_normalized /= s.patients;
    }
    out.push_back(s);
  }
  return out;
}

std::string effects_csv(const std::vector<EffectSummary>& effects) {
  std::string out = "fold,patients,mean_delta,mean_delta_normalized\n";
  for (const auto& e : effects) {
    out += fmt::format("{},{},{},{}\n", e.fold, e.patients, format_number(e.mean_delta),
                       format_number(e.mean_delta_normalized));
  }
  return out;
}

}  // namespace adherence
