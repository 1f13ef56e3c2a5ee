#include "adherence/service.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include <fmt/format.h>
#include <httplib.h>

#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence::service {

using nlohmann::json;

namespace {

constexpr int kDefaultSamples = 100;
constexpr int kMaxSamples = 2000;
constexpr unsigned long long kMaxSeed = 1ULL << 53;  // exact in a JS number

struct HttpError : Error {
  HttpError(int status, std::string field, const std::string& message)
      : Error(message), status(status), field(std::move(field)) {}
  int status;
  std::string field;
};

HttpError bad_request(const std::string& field, const std::string& message) { return {400, field, message}; }

Response error_response(int status, const std::string& field, const std::string& message) {
  json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  return {status, dump(body)};
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v(i)));
  return out;
}

double number_at(const json& j, const std::string& field) {
  if (!j.is_number()) throw bad_request(field, field + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw bad_request(field, field + " must be finite");
  return v;
}

json parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw bad_request("", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw bad_request("", std::string("request body is not JSON: ") + e.what());
  }
}

ModelKind requested_kind(const json& req, const Snapshot& snap, ModelKind fallback) {
  ModelKind kind = fallback;
  if (req.contains("model")) {
    if (!req["model"].is_string()) throw bad_request("model", "model must be a string");
    try {
      kind = parse_model_kind(req["model"].get<std::string>());
    } catch (const ValidationError& e) {
      throw HttpError(404, "model", e.what());
    }
  }
  if (!snap.models.contains(kind)) throw HttpError(404, "model", "no " + to_string(kind) + " model is loaded");
  return kind;
}

unsigned long long request_seed(const json& req) {
  if (!req.contains("seed") || req["seed"].is_null()) {
    std::random_device rd;
    return ((static_cast<unsigned long long>(rd()) << 32) | rd()) % kMaxSeed;
  }
  if (!req["seed"].is_number_unsigned() && !(req["seed"].is_number_integer() && req["seed"].get<long long>() >= 0)) {
    throw bad_request("seed", "seed must be a nonnegative integer");
  }
  const auto seed = req["seed"].get<unsigned long long>();
  if (seed >= kMaxSeed) throw bad_request("seed", "seed must be below 2^53");
  return seed;
}

int request_samples(const json& req) {
  if (!req.contains("samples")) return kDefaultSamples;
  if (!req["samples"].is_number_integer()) throw bad_request("samples", "samples must be an integer");
  const int k = req["samples"].get<int>();
  if (k < 1 || k > kMaxSamples) throw bad_request("samples", fmt::format("samples must be in 1..{}", kMaxSamples));
  return k;
}

int binary_at(const json& j, const std::string& field) {
  if (!j.is_number_integer() || (j.get<int>() != 0 && j.get<int>() != 1)) {
    throw bad_request(field, field + " must be 0 or 1");
  }
  return j.get<int>();
}

struct ParsedPatient {
  PatientRecord record;
  int last_visit = 0;
  int given_actions = 0;
};

/// Statics, observed visits and actions a_1..a_{t-1} (optionally a_t).
ParsedPatient parse_patient(const json& req, const CohortSchema& schema) {
  ParsedPatient out;
  PatientRecord& r = out.record;
  r.id = "request";
  const int sd = schema.static_dim();
  const int xd = schema.score_dim();

  if (!req.contains("static")) throw bad_request("static", "missing field 'static'");
  const json& st = req["static"];
  r.s.resize(sd);
  if (st.is_array()) {
    if (static_cast<int>(st.size()) != sd) {
      const std::string missing = st.size() < static_cast<size_t>(sd)
                                      ? fmt::format(" (first missing: '{}')", schema.static_names[st.size()])
                                      : "";
      throw bad_request("static", fmt::format("static: expected {} features, got {}{}", sd, st.size(), missing));
    }
    for (int i = 0; i < sd; ++i) r.s(i) = number_at(st[static_cast<size_t>(i)], fmt::format("static[{}]", i));
  } else if (st.is_object()) {
    for (const auto& [key, value] : st.items()) {
      if (std::find(schema.static_names.begin(), schema.static_names.end(), key) == schema.static_names.end()) {
        throw bad_request("static." + key, "unknown static feature '" + key + "'");
      }
    }
    for (int i = 0; i < sd; ++i) {
      const std::string& name = schema.static_names[static_cast<size_t>(i)];
      if (!st.contains(name)) throw bad_request("static." + name, "missing static feature '" + name + "'");
      r.s(i) = number_at(st[name], "static." + name);
    }
  } else {
    throw bad_request("static", "static must be an array or an object");
  }

  if (!req.contains("visits") || !req["visits"].is_array() || req["visits"].empty()) {
    throw bad_request("visits", "visits must be a nonempty array");
  }
  r.x = Matrix::Zero(kSteps, xd);
  r.mask.fill(false);
  for (size_t i = 0; i < req["visits"].size(); ++i) {
    const json& v = req["visits"][i];
    const std::string field = fmt::format("visits[{}]", i);
    if (!v.is_object() || !v.contains("step") || !v["step"].is_number_integer()) {
      throw bad_request(field + ".step", field + " needs an integer step");
    }
    const int step = v["step"].get<int>();
    if (step < 1 || step > kSteps) throw bad_request(field + ".step", fmt::format("step must be in 1..{}", kSteps));
    if (r.mask[static_cast<size_t>(step - 1)]) throw bad_request(field + ".step", fmt::format("duplicate step {}", step));
    if (!v.contains("scores") || !v["scores"].is_array() || static_cast<int>(v["scores"].size()) != xd) {
      throw bad_request(field + ".scores", fmt::format("{}.scores must hold {} numbers", field, xd));
    }
    for (int j = 0; j < xd; ++j) {
      const std::string f = fmt::format("{}.scores[{}]", field, j);
      const double x = number_at(v["scores"][static_cast<size_t>(j)], f);
      if (x < schema.score_lower(j) || x > schema.score_upper(j)) {
        throw bad_request(f, fmt::format("{} = {} is outside [{}, {}]", f, x, schema.score_lower(j), schema.score_upper(j)));
      }
      r.x(step - 1, j) = x;
    }
    r.mask[static_cast<size_t>(step - 1)] = true;
    out.last_visit = std::max(out.last_visit, step);
  }
  if (!r.mask[0]) throw bad_request("visits", "visit 1 must be observed");

  const json actions = req.value("actions", json::array());
  if (!actions.is_array()) throw bad_request("actions", "actions must be an array");
  const int t = out.last_visit;
  if (static_cast<int>(actions.size()) < t - 1 || static_cast<int>(actions.size()) > std::min(t, kIntervals)) {
    throw bad_request("actions", fmt::format("actions must hold a_1..a_{} (optionally a_{})", t - 1, t));
  }
  out.given_actions = static_cast<int>(actions.size());
  int prev = 1;
  for (int i = 0; i < kIntervals; ++i) {
    int a = prev;
    if (i < out.given_actions) {
      a = binary_at(actions[static_cast<size_t>(i)], fmt::format("actions[{}]", i));
      if (a == 1 && prev == 0) {
        throw HttpError(422, fmt::format("actions[{}]", i), "treatment cannot resume after a stop");
      }
    }
    r.a[static_cast<size_t>(i)] = a;
    r.y[static_cast<size_t>(i)] = a;
    prev = a;
  }
  return out;
}

const LoadedModel& model_of(const Snapshot& snap, ModelKind kind) { return snap.models.at(kind); }

json model_meta(const LoadedModel& m) {
  return {{"kind", to_string(kind_of(m.model))},
          {"config_hash", m.manifest.value("config_hash", "")},
          {"threshold", threshold_of(m.model)}};
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json sample_quantiles(const Matrix& samples, double q) {
  json out = json::array();
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    const Vector col = samples.col(j);
    out.push_back(quantile({col.data(), col.data() + col.size()}, q));
  }
  return out;
}

json score_entry(const slvm::ScoreDistribution& d) {
  return {{"step", d.step},
          {"month", kVisitMonths[static_cast<size_t>(d.step - 1)]},
          {"mean", vector_json(d.mean)},
          {"std", vector_json(d.std)},
          {"median", sample_quantiles(d.samples, 0.5)},
          {"p10", sample_quantiles(d.samples, 0.1)},
          {"p90", sample_quantiles(d.samples, 0.9)},
          {"provenance", slvm::to_string(d.provenance)}};
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const HttpError& e) {
    return error_response(e.status, e.field, e.what());
  } catch (const ValidationError& e) {
    return error_response(422, "", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "", e.what());
  }
}

}  // namespace

json round_numbers(const json& j) {
  if (j.is_number_float()) return round_sig9(j.get<double>());
  if (j.is_array() || j.is_object()) {
    json out = j;
    for (auto it = out.begin(); it != out.end(); ++it) *it = round_numbers(*it);
    return out;
  }
  return j;
}

std::string dump(const json& j) { return round_numbers(j).dump(); }

std::shared_ptr<const Snapshot> load_snapshot(const std::vector<std::filesystem::path>& paths) {
  auto snap = std::make_shared<Snapshot>();
  snap->paths = paths;
  for (const auto& p : paths) {
    LoadedModel m = load_model(p);
    const ModelKind kind = kind_of(m.model);
    snap->models.insert_or_assign(kind, std::move(m));
  }
  if (!snap->models.contains(ModelKind::Slvm)) throw ValidationError("service needs at least one SLVM artifact");
  const CohortSchema& schema = schema_of(snap->models.at(ModelKind::Slvm).model);
  for (const auto& [kind, m] : snap->models) check_compatible(m.model, schema);
  return snap;
}

Service::Service(std::vector<std::filesystem::path> paths)
    : paths_(std::move(paths)), snapshot_(load_snapshot(paths_)) {}

std::shared_ptr<const Snapshot> Service::snapshot() const {
  std::lock_guard lock(mutex_);
  return snapshot_;
}

Response Service::reload() {
  return guarded([&] {
    auto fresh = load_snapshot(paths_);
    {
      std::lock_guard lock(mutex_);
      snapshot_ = fresh;
    }
    json body = json::parse(meta().body);
    body["reloaded"] = true;
    return Response{200, dump(body)};
  });
}

Response Service::meta() const {
  const auto snap = snapshot();
  const LoadedModel& primary = model_of(*snap, ModelKind::Slvm);
  const CohortSchema& schema = schema_of(primary.model);
  json models = json::array();
  json kinds = json::array();
  for (const auto& [kind, m] : snap->models) {
    kinds.push_back(to_string(kind));
    models.push_back(model_meta(m));
  }
  return {200, dump({{"model_kinds", kinds},
                     {"models", models},
                     {"static_dim", schema.static_dim()},
                     {"score_dim", schema.score_dim()},
                     {"steps", kSteps},
                     {"step_months", kVisitMonths},
                     {"config_hash", primary.manifest.value("config_hash", "")}})};
}

Response Service::features() const {
  const auto snap = snapshot();
  const AnyModel& m = model_of(*snap, ModelKind::Slvm).model;
  const CohortSchema& schema = schema_of(m);
  const NormalizationStats& stats = stats_of(m);
  json statics = json::array();
  for (int i = 0; i < schema.static_dim(); ++i) {
    statics.push_back({{"index", i},
                       {"name", schema.static_names[static_cast<size_t>(i)]},
                       {"mean", stats.static_mean(i)},
                       {"std", stats.static_std(i)}});
  }
  json scores = json::array();
  for (int j = 0; j < schema.score_dim(); ++j) {
    scores.push_back({{"index", j},
                      {"name", schema.score_names[static_cast<size_t>(j)]},
                      {"lower", finite_or_null(schema.score_lower(j))},
                      {"upper", finite_or_null(schema.score_upper(j))},
                      {"mean", stats.score_mean(j)},
                      {"std", stats.score_std(j)}});
  }
  return {200, dump({{"static", statics}, {"scores", scores}, {"step_months", kVisitMonths}})};
}

Response Service::predict(const std::string& body) const {
  return guarded([&] {
    const auto snap = snapshot();
    const json req = parse_body(body);
    const ModelKind kind = requested_kind(req, *snap, ModelKind::Slvm);
    const LoadedModel& lm = model_of(*snap, kind);
    ParsedPatient p = parse_patient(req, schema_of(lm.model));
    const int t = p.last_visit;
    if (t > kIntervals) throw bad_request("visits", "the last observed visit must be at most 5 to predict ahead");
    const unsigned long long seed = request_seed(req);
    const int samples = request_samples(req);

    json out{{"model", model_meta(lm)}, {"seed", seed}, {"start_step", t}};
    if (const auto* m = std::get_if<slvm::SlvmModel>(&lm.model)) {
      nn::Rng rng(seed);
      const auto pred = slvm::predict_one_step(*m, p.record, t, samples, rng);
      out["samples"] = samples;
      out["adherence"] = {{"step", t}, {"probability", pred.adherence.probability}};
      out["next_score"] = score_entry(pred.next_score);
    } else {
      const auto pred = lstm::forward(std::get<lstm::LstmModel>(lm.model), p.record, t);
      out["samples"] = 1;
      out["adherence"] = {{"step", t}, {"probability", pred.adherence}};
      out["next_score"] = {{"step", t + 1},
                           {"month", kVisitMonths[static_cast<size_t>(t)]},
                           {"mean", vector_json(pred.next_score)},
                           {"std", nullptr},
                           {"provenance", "point"}};
    }
    out["action"] = p.record.a[static_cast<size_t>(t - 1)];
    return Response{200, dump(out)};
  });
}

Response Service::whatif(const std::string& body) const {
  return guarded([&] {
    const auto snap = snapshot();
    const json req = parse_body(body);
    const ModelKind kind = requested_kind(req, *snap, ModelKind::Slvm);
    if (kind != ModelKind::Slvm) throw bad_request("model", "what-if simulation needs the slvm model");
    const LoadedModel& lm = model_of(*snap, kind);
    const auto& m = std::get<slvm::SlvmModel>(lm.model);
    ParsedPatient p = parse_patient(req, m.schema);
    const int t = p.last_visit;
    if (t > kIntervals) throw bad_request("visits", "the last observed visit must be at most 5 to simulate");
    if (p.given_actions != t - 1) throw bad_request("actions", fmt::format("what-if takes a_1..a_{} only", t - 1));
    const unsigned long long seed = request_seed(req);
    const int samples = request_samples(req);

    if (!req.contains("scenarios") || !req["scenarios"].is_array() || req["scenarios"].empty()) {
      throw bad_request("scenarios", "scenarios must be a nonempty array");
    }
    std::vector<std::vector<int>> scenarios;
    for (size_t i = 0; i < req["scenarios"].size(); ++i) {
      const json& s = req["scenarios"][i];
      const std::string field = fmt::format("scenarios[{}]", i);
      const json& actions = s.is_object() ? s.value("actions", json()) : s;
      if (!actions.is_array() || static_cast<int>(actions.size()) != kSteps - t) {
        throw bad_request(field, fmt::format("{} must hold {} actions (a_{}..a_5)", field, kSteps - t, t));
      }
      std::vector<int> plan;
      for (size_t k = 0; k < actions.size(); ++k) plan.push_back(binary_at(actions[k], fmt::format("{}[{}]", field, k)));
      try {
        slvm::validate_plan(slvm::ActionPlan::fixed_suffix(plan), p.record, t);
      } catch (const ValidationError& e) {
        throw HttpError(422, field, e.what());
      }
      scenarios.push_back(std::move(plan));
    }

    const auto result = slvm::simulate_interventions(m, p.record, t, scenarios, samples, seed);
    json out_scenarios = json::array();
    for (size_t i = 0; i < scenarios.size(); ++i) {
      const auto& traj = result.trajectories[i];
      json steps = json::array();
      const Vector observed = p.record.x.row(t - 1).transpose();
      steps.push_back({{"step", t},
                       {"month", kVisitMonths[static_cast<size_t>(t - 1)]},
                       {"mean", vector_json(observed)},
                       {"std", vector_json(Vector::Zero(observed.size()))},
                       {"median", vector_json(observed)},
                       {"p10", vector_json(observed)},
                       {"p90", vector_json(observed)},
                       {"provenance", "observed"}});
      for (const auto& d : traj.scores) steps.push_back(score_entry(d));
      for (const auto& a : traj.adherence) {
        steps[static_cast<size_t>(a.step - t)]["adherence_probability"] = a.probability;
      }
      steps.back()["adherence_probability"] = nullptr;
      out_scenarios.push_back({{"actions", scenarios[i]}, {"trajectory", steps}});
    }
    json deltas = json::array(), deltas_norm = json::array();
    for (size_t i = 0; i < scenarios.size(); ++i) {
      deltas.push_back(result.delta[i]);
      deltas_norm.push_back(result.delta_normalized[i]);
    }
    return Response{200, dump({{"model", model_meta(lm)},
                               {"seed", seed},
                               {"samples", samples},
                               {"start_step", t},
                               {"scenarios", out_scenarios},
                               {"deltas", deltas},
                               {"deltas_normalized", deltas_norm}})};
  });
}

void bind_routes(httplib::Server& server, Service& service) {
  const auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server.Get("/meta", [&, send](const httplib::Request&, httplib::Response& res) { send(res, service.meta()); });
  server.Get("/features", [&, send](const httplib::Request&, httplib::Response& res) { send(res, service.features()); });
  server.Post("/predict", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.predict(req.body));
  });
  server.Post("/whatif", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.whatif(req.body));
  });
  server.Post("/reload", [&, send](const httplib::Request&, httplib::Response& res) { send(res, service.reload()); });
}

void serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  bind_routes(server, service);
  if (!server.listen(host, port)) throw Error(fmt::format("cannot listen on {}:{}", host, port));
}

}  // namespace adherence::service
