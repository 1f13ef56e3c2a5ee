// Command-line entry point: ingest, train, eval, attribute, simulate, serve.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "adherence/error.hpp"
#include "adherence/pipeline.hpp"
#include "adherence/service.hpp"
#include "adherence/synthetic.hpp"
#include "adherence/text.hpp"

using namespace adherence;

namespace {

constexpr int kUsageError = 2;
constexpr int kFailure = 1;

std::vector<int> parse_actions(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item != "0" && item != "1") throw ValidationError("actions must be a comma list of 0/1, got '" + text + "'");
    out.push_back(item == "1");
  }
  return out;
}

std::vector<ModelKind> kinds_of(const std::vector<std::string>& names) {
  std::vector<ModelKind> out;
  for (const auto& n : names) out.push_back(parse_model_kind(n));
  return out;
}

struct IngestArgs {
  std::string config, data, mapping, out;
  std::optional<unsigned long long> split_seed;
  int synthetic = 0;
  unsigned long long synthetic_seed = 0;
};

int run_ingest(const IngestArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.data.empty()) cfg.dataset = a.data;
  if (!a.mapping.empty()) cfg.mapping = a.mapping;
  if (!a.out.empty()) cfg.output = a.out;
  if (a.split_seed) cfg.split_seed = *a.split_seed;
  Cohort cohort;
  if (a.synthetic > 0) {
    cohort = apply_withdrawal_policy(synthetic_cohort({a.synthetic, a.synthetic_seed}), cfg.use_post_withdrawal_scores);
    cfg.dataset = "synthetic";
  } else {
    cohort = load_run_cohort(cfg);
  }
  const Workspace ws = ingest(cfg, cohort);
  fmt::print("ingested {} patients ({} test) into {}\n", ws.cohort.size(), ws.splits.test_ids().size(), cfg.output);
  fmt::print("config hash {}\n", cfg.hash());
  return 0;
}

struct TrainArgs {
  std::string out;
  std::vector<std::string> models;
  std::optional<int> epochs;
  std::optional<unsigned long long> seed;
};

int run_train(const TrainArgs& a) {
  Workspace ws = open_workspace(a.out);
  if (!a.models.empty()) ws.config.models = a.models;
  if (a.epochs) ws.config.train.max_epochs = *a.epochs;
  if (a.seed) ws.config.train.seed = *a.seed;
  RunConfig::from_json(ws.config.to_json());
  write_file(std::filesystem::path(a.out) / "config.json", ws.config.to_json().dump(2) + "\n");
  for (ModelKind kind : kinds_of(ws.config.models)) {
    const FoldTraining t = train_and_save(ws, kind);
    for (size_t f = 0; f < t.best_epochs.size(); ++f) {
      fmt::print("{} fold {}: best epoch {}\n", to_string(kind), f, t.best_epochs[f]);
    }
  }
  fmt::print("config hash {}\n", ws.config.hash());
  return 0;
}

struct EvalArgs {
  std::string out;
  std::optional<int> samples;
  std::vector<std::string> require;
};

int run_eval(const EvalArgs& a) {
  std::vector<eval::Requirement> reqs;
  for (const auto& r : a.require) reqs.push_back(eval::Requirement::parse(r));
  Workspace ws = open_workspace(a.out);
  if (a.samples) ws.config.samples = *a.samples;
  std::vector<std::pair<ModelKind, std::vector<AnyModel>>> models;
  for (ModelKind kind : kinds_of(ws.config.models)) {
    models.emplace_back(kind, load_fold_models(a.out, kind, ws.config.folds));
  }
  const eval::MetricTable table = evaluate(ws, models);
  eval::emit_report(table, ws.cohort, std::filesystem::path(a.out) / "report");
  for (const auto& row : table) {
    if (row.fold == eval::kAggregateFold && row.protocol == "one-step" && row.dim == "all") {
      fmt::print("{:6} step {} {:9} {:.3f} +- {:.3f}\n", row.model, row.step, row.metric, row.mean, row.std);
    }
  }
  int failed = 0;
  for (const auto& r : reqs) {
    const auto failures = eval::check_requirement(table, r);
    fmt::print("{} {}\n", failures.empty() ? "PASS" : "FAIL", r.text);
    for (const auto& f : failures) fmt::print("  {}\n", f);
    failed += !failures.empty();
  }
  return failed > 0 ? kFailure : 0;
}

struct AttributeArgs {
  std::string out;
  std::optional<int> steps;
  std::string target;
};

int run_attribute(const AttributeArgs& a) {
  Workspace ws = open_workspace(a.out);
  if (a.steps) ws.config.ig_steps = *a.steps;
  if (!a.target.empty()) ws.config.ig_target = a.target;
  RunConfig::from_json(ws.config.to_json());
  const auto models = load_fold_models(a.out, ModelKind::Slvm, ws.config.folds);
  const auto results = attribute(ws, models);
  const auto table = attribution::rank_features(results, ws.cohort.schema.static_names);
  const std::filesystem::path dir = std::filesystem::path(a.out) / "attribution";
  write_file(dir / "importance.csv", attribution::importance_csv(table));

  std::string per_patient = "patient,fold_result,feature,attribution\n";
  double worst = 0.0;
  for (size_t i = 0; i < results.size(); ++i) {
    worst = std::max(worst, results[i].residual);
    for (int j = 0; j < ws.cohort.schema.static_dim(); ++j) {
      per_patient += fmt::format("{},{},{},{}\n", csv_escape(results[i].patient), i,
                                 csv_escape(ws.cohort.schema.static_names[static_cast<size_t>(j)]),
                                 format_number(results[i].attributions(j)));
    }
  }
  write_file(dir / "attributions.csv", per_patient);
  for (const auto& r : table) fmt::print("{:2}. {:24} {:.5f} +- {:.5f}\n", r.rank, r.feature, r.mean, r.std);
  fmt::print("max completeness residual {:.2e}\n", worst);
  return 0;
}

struct SimulateArgs {
  std::string out;
  int prefix = 3;
  std::string first = "1,1,1";
  std::string second = "0,0,0";
  std::optional<int> samples;
  std::optional<unsigned long long> seed;
};

int run_simulate(const SimulateArgs& a) {
  Workspace ws = open_workspace(a.out);
  if (a.samples) ws.config.samples = *a.samples;
  if (a.seed) ws.config.eval_seed = *a.seed;
  if (a.prefix < 1 || a.prefix > kIntervals) throw ValidationError("prefix must be in 1..5");
  const auto first = parse_actions(a.first);
  const auto second = parse_actions(a.second);
  const auto models = load_fold_models(a.out, ModelKind::Slvm, ws.config.folds);
  const auto effects = simulate_effects(ws, models, a.prefix, first, second);
  write_file(std::filesystem::path(a.out) / "simulate" / "effects.csv", effects_csv(effects));
  double mean = 0.0;
  for (const auto& e : effects) {
    fmt::print("fold {}: {} patients, mean x6 delta {:+.4f} (normalized {:+.4f})\n", e.fold, e.patients, e.mean_delta,
               e.mean_delta_normalized);
    mean += e.mean_delta / static_cast<double>(effects.size());
  }
  fmt::print("mean x6 delta [{}] - [{}]: {:+.4f}\n", a.first, a.second, mean);
  return 0;
}

struct ServeArgs {
  std::string out;
  std::vector<std::string> artifacts;
  int fold = 0;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int run_serve(const ServeArgs& a) {
  std::vector<std::filesystem::path> paths(a.artifacts.begin(), a.artifacts.end());
  if (paths.empty()) {
    if (a.out.empty()) throw ValidationError("serve needs --out or --artifact");
    for (ModelKind kind : {ModelKind::Slvm, ModelKind::Lstm}) {
      const auto p = model_path(a.out, kind, a.fold);
      if (std::filesystem::exists(p)) paths.push_back(p);
    }
  }
  service::Service svc(paths);
  fmt::print("serving {} artifact(s) on http://{}:{}\n", paths.size(), a.host, a.port);
  std::fflush(stdout);
  service::serve(svc, a.host, a.port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment adherence and symptom trajectory models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a cohort, write canonical CSV, splits and config");
  ingest_cmd->add_option("--config", ingest_args.config, "Run config JSON (missing keys take defaults)");
  ingest_cmd->add_option("--data", ingest_args.data, "Cohort CSV");
  ingest_cmd->add_option("--mapping", ingest_args.mapping, "Column mapping file (source = canonical)");
  ingest_cmd->add_option("--out", ingest_args.out, "Output directory");
  ingest_cmd->add_option("--split-seed", ingest_args.split_seed, "Seed for the test/fold assignment");
  ingest_cmd->add_option("--synthetic", ingest_args.synthetic, "Generate N synthetic patients instead of --data");
  ingest_cmd->add_option("--synthetic-seed", ingest_args.synthetic_seed, "Seed for --synthetic");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train every fold model of the configured kinds");
  train_cmd->add_option("--out", train_args.out, "Workspace directory written by ingest")->required();
  train_cmd->add_option("--model", train_args.models, "slvm and/or lstm (default: config)");
  train_cmd->add_option("--epochs", train_args.epochs, "Maximum epochs");
  train_cmd->add_option("--seed", train_args.seed, "Training seed (fold f uses seed + f)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "One-step and rollout metrics on the test split");
  eval_cmd->add_option("--out", eval_args.out, "Workspace directory")->required();
  eval_cmd->add_option("--samples", eval_args.samples, "Latent samples per prediction");
  eval_cmd->add_option("--require", eval_args.require,
                       "Threshold like slvm/one-step/rmse/all<4.55 (repeatable; exit 1 when violated)");

  AttributeArgs attribute_args;
  auto* attribute_cmd = app.add_subcommand("attribute", "Integrated-gradients importance of the static features");
  attribute_cmd->add_option("--out", attribute_args.out, "Workspace directory")->required();
  attribute_cmd->add_option("--steps", attribute_args.steps, "Path steps m");
  attribute_cmd->add_option("--target", attribute_args.target, "mean or step:<t>");

  SimulateArgs simulate_args;
  auto* simulate_cmd = app.add_subcommand("simulate", "Compare two action suffixes on the test patients");
  simulate_cmd->add_option("--out", simulate_args.out, "Workspace directory")->required();
  simulate_cmd->add_option("--prefix", simulate_args.prefix, "Last observed visit t")->capture_default_str();
  simulate_cmd->add_option("--first", simulate_args.first, "Actions a_t..a_5")->capture_default_str();
  simulate_cmd->add_option("--second", simulate_args.second, "Actions a_t..a_5")->capture_default_str();
  simulate_cmd->add_option("--samples", simulate_args.samples, "Latent samples");
  simulate_cmd->add_option("--seed", simulate_args.seed, "Noise seed");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service for prediction and what-if simulation");
  serve_cmd->add_option("--out", serve_args.out, "Workspace directory (serves the chosen fold)");
  serve_cmd->add_option("--artifact", serve_args.artifacts, "Model artifact path (repeatable)");
  serve_cmd->add_option("--fold", serve_args.fold, "Fold model to serve from --out")->capture_default_str();
  serve_cmd->add_option("--host", serve_args.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", serve_args.port, "Port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest_args);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*attribute_cmd) return run_attribute(attribute_args);
    if (*simulate_cmd) return run_simulate(simulate_args);
    if (*serve_cmd) return run_serve(serve_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsageError;
}
