#include "adherence/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <tuple>

#include <fmt/format.h>

#include "adherence/error.hpp"
#include "adherence/text.hpp"

namespace adherence::eval {

RmseResult rmse(const Matrix& pred, const Matrix& target, const std::vector<bool>& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError(fmt::format("rmse: prediction is {}x{}, target {}x{}", pred.rows(), pred.cols(),
                                     target.rows(), target.cols()));
  }
  if (static_cast<Eigen::Index>(mask.size()) != pred.rows()) throw DimensionError("rmse: mask length mismatch");
  RmseResult out;
  Vector sq = Vector::Zero(pred.cols());
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    sq += (pred.row(i) - target.row(i)).transpose().array().square().matrix();
    ++out.count;
  }
  if (out.count == 0) throw ValidationError("rmse: mask selects no rows");
  out.per_dim = (sq / out.count).array().sqrt().matrix();
  out.aggregate = std::sqrt(sq.sum() / (static_cast<double>(out.count) * static_cast<double>(pred.cols())));
  return out;
}

ClassificationMetrics classification_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                             double threshold, int positive) {
  if (probs.size() != labels.size()) throw DimensionError("classification_metrics: length mismatch");
  if (probs.empty()) throw ValidationError("classification_metrics: no predictions");
  ClassificationMetrics m;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("classification_metrics: labels must be 0 or 1");
    const int predicted = probs[i] >= threshold ? 1 : 0;
    const bool pred_pos = predicted == positive;
    const bool true_pos = labels[i] == positive;
    if (pred_pos && true_pos) ++m.tp;
    else if (pred_pos) ++m.fp;
    else if (true_pos) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(probs.size());
  if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
  else m.precision_undefined = true;
  if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / (m.tp + m.fn);
  else m.recall_undefined = true;
  if (m.precision + m.recall > 0) m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  else m.f1_undefined = true;
  return m;
}

std::string to_string(Protocol p) { return p == Protocol::OneStep ? "one-step" : "rollout"; }

Protocol parse_protocol(const std::string& name) {
  if (name == "one-step") return Protocol::OneStep;
  if (name == "rollout") return Protocol::Rollout;
  throw ValidationError("unknown protocol '" + name + "' (expected one-step or rollout)");
}

namespace {

Rng record_rng(unsigned long long seed, int fold, size_t patient, int t) {
  std::seed_seq seq{static_cast<unsigned>(seed), static_cast<unsigned>(seed >> 32), static_cast<unsigned>(fold),
                    static_cast<unsigned>(patient), static_cast<unsigned>(t)};
  return Rng(seq);
}

PredictionRecord base_record(const PatientRecord& r, int fold, int start, int step) {
  PredictionRecord p;
  p.patient = r.id;
  p.fold = fold;
  p.start = start;
  p.step = step;
  p.label = r.y[static_cast<size_t>(step - 1)];
  p.target = r.x.row(step).transpose();
  p.observed = r.mask[static_cast<size_t>(step)];
  return p;
}

std::vector<double> to_std_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

void predict_slvm(const slvm::SlvmModel& m, const PatientRecord& r, int fold, int t, Protocol protocol, int samples,
                  Rng& rng, std::vector<PredictionRecord>& out) {
  if (protocol == Protocol::OneStep) {
    const auto pred = slvm::predict_one_step(m, r, t, samples, rng);
    PredictionRecord p = base_record(r, fold, t, t);
    p.probability = pred.adherence.probability;
    p.probability_samples = to_std_vector(pred.adherence.samples);
    p.score = pred.next_score.mean;
    p.score_samples = pred.next_score.samples;
    out.push_back(std::move(p));
    return;
  }
  const auto traj = slvm::rollout(m, r, t, slvm::ActionPlan::inferred(), samples, rng);
  for (int u = t; u <= kIntervals; ++u) {
    const auto k = static_cast<size_t>(u - t);
    PredictionRecord p = base_record(r, fold, t, u);
    p.probability = traj.adherence[k].probability;
    p.probability_samples = to_std_vector(traj.adherence[k].samples);
    p.score = traj.scores[k].mean;
    p.score_samples = traj.scores[k].samples;
    out.push_back(std::move(p));
  }
}

void predict_lstm(const lstm::LstmModel& m, const PatientRecord& r, int fold, int t, Protocol protocol,
                  std::vector<PredictionRecord>& out) {
  if (protocol == Protocol::OneStep) {
    const auto pred = lstm::forward(m, r, t);
    PredictionRecord p = base_record(r, fold, t, t);
    p.probability = pred.adherence;
    p.score = pred.next_score;
    out.push_back(std::move(p));
    return;
  }
  const auto traj = lstm::rollout(m, r, t);
  for (int u = t; u <= kIntervals; ++u) {
    const auto k = static_cast<size_t>(u - t);
    PredictionRecord p = base_record(r, fold, t, u);
    p.probability = traj.adherence[k];
    p.score = traj.scores[k];
    out.push_back(std::move(p));
  }
}

}  // namespace

std::vector<PredictionRecord> run_protocol(const std::vector<AnyModel>& fold_models, const Cohort& cohort,
                                           const std::vector<std::string>& test_ids, Protocol protocol, int samples,
                                           unsigned long long seed) {
  if (samples < 1) throw ValidationError("run_protocol: samples must be positive");
  std::vector<PredictionRecord> out;
  for (size_t f = 0; f < fold_models.size(); ++f) {
    const AnyModel& model = fold_models[f];
    check_compatible(model, cohort.schema);
    const int fold = static_cast<int>(f);
    for (size_t i = 0; i < test_ids.size(); ++i) {
      const PatientRecord& r = cohort.by_id(test_ids[i]);
      for (int t = 1; t <= kIntervals; ++t) {
        Rng rng = record_rng(seed, fold, i, t);
        if (const auto* m = std::get_if<slvm::SlvmModel>(&model)) {
          predict_slvm(*m, r, fold, t, protocol, samples, rng, out);
        } else {
          predict_lstm(std::get<lstm::LstmModel>(model), r, fold, t, protocol, out);
        }
      }
    }
  }
  return out;
}

namespace {

double population_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct GroupKey {
  int fold, start, step;
  auto operator<=>(const GroupKey&) const = default;
};

size_t common_sample_count(const std::vector<const PredictionRecord*>& group, bool scores) {
  size_t k = std::numeric_limits<size_t>::max();
  for (const auto* p : group) {
    const size_t n = scores ? static_cast<size_t>(p->score_samples.rows()) : p->probability_samples.size();
    k = std::min(k, n);
  }
  return k == std::numeric_limits<size_t>::max() ? 0 : k;
}

void classification_rows(const std::vector<const PredictionRecord*>& group, double threshold, MetricRow proto,
                         MetricTable& out) {
  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto* p : group) {
    probs.push_back(p->probability);
    labels.push_back(p->label);
  }
  const ClassificationMetrics m = classification_metrics(probs, labels, threshold);

  std::vector<std::vector<double>> per_sample(4);
  const size_t k = common_sample_count(group, false);
  for (size_t s = 0; s < k; ++s) {
    std::vector<double> sp;
    for (const auto* p : group) sp.push_back(p->probability_samples[s]);
    const ClassificationMetrics ms = classification_metrics(sp, labels, threshold);
    per_sample[0].push_back(ms.accuracy);
    per_sample[1].push_back(ms.precision);
    per_sample[2].push_back(ms.recall);
    per_sample[3].push_back(ms.f1);
  }

  const std::array<std::tuple<const char*, double, bool>, 4> metrics{{
      {"accuracy", m.accuracy, false},
      {"precision", m.precision, m.precision_undefined},
      {"recall", m.recall, m.recall_undefined},
      {"f1", m.f1, m.f1_undefined},
  }};
  proto.count = static_cast<int>(group.size());
  proto.dim = "all";
  for (size_t i = 0; i < metrics.size(); ++i) {
    MetricRow row = proto;
    row.metric = std::get<0>(metrics[i]);
    row.mean = std::get<1>(metrics[i]);
    row.undefined = std::get<2>(metrics[i]);
    row.sample_std = population_std(per_sample[i]);
    out.push_back(row);
  }
}

void rmse_rows(const std::vector<const PredictionRecord*>& group, const CohortSchema& schema, MetricRow proto,
               MetricTable& out) {
  std::vector<const PredictionRecord*> observed;
  for (const auto* p : group) {
    if (p->observed) observed.push_back(p);
  }
  if (observed.empty()) return;
  const auto n = static_cast<Eigen::Index>(observed.size());
  const Eigen::Index d = observed[0]->target.size();
  Matrix pred(n, d), target(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    pred.row(i) = observed[static_cast<size_t>(i)]->score.transpose();
    target.row(i) = observed[static_cast<size_t>(i)]->target.transpose();
  }
  const std::vector<bool> mask(static_cast<size_t>(n), true);
  const RmseResult r = rmse(pred, target, mask);

  std::vector<double> agg_samples;
  std::vector<std::vector<double>> dim_samples(static_cast<size_t>(d));
  const size_t k = common_sample_count(observed, true);
  for (size_t s = 0; s < k; ++s) {
    Matrix sp(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      sp.row(i) = observed[static_cast<size_t>(i)]->score_samples.row(static_cast<Eigen::Index>(s));
    }
    const RmseResult rs = rmse(sp, target, mask);
    agg_samples.push_back(rs.aggregate);
    for (Eigen::Index j = 0; j < d; ++j) dim_samples[static_cast<size_t>(j)].push_back(rs.per_dim(j));
  }

  proto.metric = "rmse";
  proto.count = static_cast<int>(n);
  MetricRow row = proto;
  row.dim = "all";
  row.mean = r.aggregate;
  row.sample_std = population_std(agg_samples);
  out.push_back(row);
  for (Eigen::Index j = 0; j < d; ++j) {
    row = proto;
    row.dim = j < schema.score_dim() ? schema.score_names[static_cast<size_t>(j)] : fmt::format("x{}", j + 1);
    row.mean = r.per_dim(j);
    row.sample_std = population_std(dim_samples[static_cast<size_t>(j)]);
    out.push_back(row);
  }
}

auto row_order(const MetricRow& r) {
  const bool aggregate = r.fold == kAggregateFold;
  const int fold = aggregate ? std::numeric_limits<int>::max() : std::stoi(r.fold);
  return std::make_tuple(r.model, r.protocol, aggregate, fold, r.start, r.step, r.metric, r.dim);
}

}  // namespace

MetricTable metric_table(const std::vector<PredictionRecord>& records, const std::string& model, Protocol protocol,
                         const CohortSchema& schema, double threshold) {
  std::map<GroupKey, std::vector<const PredictionRecord*>> groups;
  for (const auto& p : records) groups[{p.fold, p.start, p.step}].push_back(&p);

  MetricTable table;
  for (auto& [key, group] : groups) {
    std::sort(group.begin(), group.end(),
              [](const PredictionRecord* a, const PredictionRecord* b) { return a->patient < b->patient; });
    MetricRow proto;
    proto.model = model;
    proto.protocol = to_string(protocol);
    proto.fold = std::to_string(key.fold);
    proto.start = key.start;
    proto.step = key.step;
    classification_rows(group, threshold, proto, table);
    rmse_rows(group, schema, proto, table);
  }

  std::map<std::tuple<int, int, std::string, std::string>, std::vector<const MetricRow*>> by_metric;
  for (const auto& row : table) by_metric[{row.start, row.step, row.metric, row.dim}].push_back(&row);
  MetricTable aggregate;
  for (const auto& [key, rows] : by_metric) {
    MetricRow agg = *rows.front();
    agg.fold = kAggregateFold;
    std::vector<double> values, sample_stds;
    agg.count = 0;
    agg.undefined = false;
    for (const auto* r : rows) {
      values.push_back(r->mean);
      sample_stds.push_back(r->sample_std);
      agg.count += r->count;
      agg.undefined = agg.undefined || r->undefined;
    }
    agg.mean = mean_of(values);
    agg.std = population_std(values);
    agg.sample_std = mean_of(sample_stds);
    aggregate.push_back(agg);
  }
  table.insert(table.end(), aggregate.begin(), aggregate.end());
  std::sort(table.begin(), table.end(), [](const MetricRow& a, const MetricRow& b) { return row_order(a) < row_order(b); });
  return table;
}

BaselineSpec BaselineSpec::from_cohort(const Cohort& cohort, unsigned long long seed) {
  const int d = cohort.schema.score_dim();
  BaselineSpec spec;
  spec.seed = seed;
  spec.lower = cohort.schema.score_lower;
  spec.upper = cohort.schema.score_upper;
  Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
  for (const auto& r : cohort.records) {
    for (int t = 0; t < kSteps; ++t) {
      if (!r.mask[static_cast<size_t>(t)]) continue;
      lo = lo.cwiseMin(r.x.row(t).transpose());
      hi = hi.cwiseMax(r.x.row(t).transpose());
    }
  }
  for (int j = 0; j < d; ++j) {
    if (!std::isfinite(spec.lower(j))) spec.lower(j) = std::isfinite(lo(j)) ? lo(j) : 0.0;
    if (!std::isfinite(spec.upper(j))) spec.upper(j) = std::isfinite(hi(j)) ? std::max(hi(j), spec.lower(j)) : spec.lower(j);
  }
  return spec;
}

std::vector<PredictionRecord> random_baseline(const BaselineSpec& spec, const Cohort& cohort,
                                              const std::vector<std::string>& ids) {
  if (!spec.lower.allFinite() || !spec.upper.allFinite()) throw ValidationError("baseline: bounds must be finite");
  if ((spec.upper.array() < spec.lower.array()).any()) throw ValidationError("baseline: upper below lower");
  Rng rng(spec.seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<PredictionRecord> out;
  for (const auto& id : ids) {
    const PatientRecord& r = cohort.by_id(id);
    for (int t = 1; t <= kIntervals; ++t) {
      PredictionRecord p = base_record(r, 0, t, t);
      p.probability = coin(rng) ? 1.0 : 0.0;
      p.score.resize(spec.lower.size());
      for (Eigen::Index j = 0; j < spec.lower.size(); ++j) {
        p.score(j) = spec.lower(j) + (spec.upper(j) - spec.lower(j)) * unit(rng);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string metric_csv(const MetricTable& table) {
  std::string out = std::string(kMetricColumns) + "\n";
  for (const auto& r : table) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_escape(r.model), csv_escape(r.protocol),
                       csv_escape(r.fold), r.start, r.step, csv_escape(r.metric), csv_escape(r.dim),
                       format_number(r.mean), format_number(r.std), format_number(r.sample_std), r.count,
                       r.undefined ? 1 : 0);
  }
  return out;
}

MetricTable parse_metric_csv(const std::string& text) {
  const auto rows = parse_csv(text);
  if (rows.empty() || join(rows[0], ",") != kMetricColumns) throw SchemaError("metric csv: unexpected header");
  MetricTable table;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 12) throw SchemaError(fmt::format("metric csv: line {} has {} fields", i + 1, f.size()));
    try {
      MetricRow r;
      r.model = f[0];
      r.protocol = f[1];
      r.fold = f[2];
      r.start = std::stoi(f[3]);
      r.step = std::stoi(f[4]);
      r.metric = f[5];
      r.dim = f[6];
      r.mean = std::stod(f[7]);
      r.std = std::stod(f[8]);
      r.sample_std = std::stod(f[9]);
      r.count = std::stoi(f[10]);
      r.undefined = f[11] == "1";
      table.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw SchemaError(fmt::format("metric csv: line {} has a malformed number", i + 1));
    }
  }
  return table;
}

std::vector<int> histogram(const std::vector<double>& values, double lower, double upper, int bins) {
  if (bins < 1) throw ValidationError("histogram: bins must be positive");
  if (!(upper >= lower)) throw ValidationError("histogram: upper below lower");
  std::vector<int> counts(static_cast<size_t>(bins), 0);
  const double width = (upper - lower) / bins;
  for (double v : values) {
    if (v < lower || v > upper) continue;
    int b = width > 0 ? static_cast<int>(std::floor((v - lower) / width)) : 0;
    b = std::clamp(b, 0, bins - 1);
    ++counts[static_cast<size_t>(b)];
  }
  return counts;
}

std::string histogram_csv(const Cohort& cohort, int bins) {
  const BaselineSpec range = BaselineSpec::from_cohort(cohort, 0);
  std::string out = "dim,visit,bin_lower,bin_upper,count\n";
  for (int j = 0; j < cohort.schema.score_dim(); ++j) {
    const double lo = range.lower(j), hi = range.upper(j);
    const double width = (hi - lo) / bins;
    for (int t = 0; t < kSteps; ++t) {
      std::vector<double> values;
      for (const auto& r : cohort.records) {
        if (r.mask[static_cast<size_t>(t)]) values.push_back(r.x(t, j));
      }
      const auto counts = histogram(values, lo, hi, bins);
      for (int b = 0; b < bins; ++b) {
        out += fmt::format("{},{},{},{},{}\n", csv_escape(cohort.schema.score_names[static_cast<size_t>(j)]), t + 1,
                           format_number(lo + b * width), format_number(b + 1 == bins ? hi : lo + (b + 1) * width),
                           counts[static_cast<size_t>(b)]);
      }
    }
  }
  return out;
}

void emit_report(const MetricTable& table, const Cohort& cohort, const std::filesystem::path& dir) {
  write_file(dir / "metrics.csv", metric_csv(table));

  std::string rmse_long = "model,protocol,start,step,horizon,dim,mean,std,sample_std\n";
  std::string cls_long = "model,protocol,start,step,horizon,metric,mean,std,sample_std\n";
  for (const auto& r : table) {
    if (r.fold != kAggregateFold) continue;
    if (r.metric == "rmse") {
      rmse_long += fmt::format("{},{},{},{},{},{},{},{},{}\n", csv_escape(r.model), r.protocol, r.start, r.step,
                               r.step - r.start, csv_escape(r.dim), format_number(r.mean), format_number(r.std),
                               format_number(r.sample_std));
    } else {
      cls_long += fmt::format("{},{},{},{},{},{},{},{},{}\n", csv_escape(r.model), r.protocol, r.start, r.step,
                              r.step - r.start, r.metric, format_number(r.mean), format_number(r.std),
                              format_number(r.sample_std));
    }
  }
  write_file(dir / "rmse_long.csv", rmse_long);
  write_file(dir / "classification_long.csv", cls_long);
  write_file(dir / "score_histograms.csv", histogram_csv(cohort));
}

std::optional<MetricRow> find_row(const MetricTable& table, const std::string& model, const std::string& protocol,
                                  const std::string& fold, int start, int step, const std::string& metric,
                                  const std::string& dim) {
  for (const auto& r : table) {
    if (r.model == model && r.protocol == protocol && r.fold == fold && r.start == start && r.step == step &&
        r.metric == metric && r.dim == dim) {
      return r;
    }
  }
  return std::nullopt;
}

Requirement Requirement::parse(const std::string& text) {
  static const std::regex pattern(R"(^([\w-]+)/([\w-]+)/(\w+)/(all|\d+)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern)) {
    throw ValidationError("bad requirement '" + text + "' (expected model/protocol/metric/step OP value)");
  }
  Requirement r;
  r.model = m[1];
  r.protocol = m[2];
  r.metric = m[3];
  r.step = m[4] == "all" ? 0 : std::stoi(m[4]);
  r.op = m[5];
  try {
    r.value = std::stod(m[6]);
  } catch (const std::logic_error&) {
    throw ValidationError("bad requirement value in '" + text + "'");
  }
  r.text = text;
  return r;
}

std::vector<std::string> check_requirement(const MetricTable& table, const Requirement& req) {
  std::vector<std::string> failures;
  int matched = 0;
  for (const auto& row : table) {
    if (row.fold != kAggregateFold || row.dim != "all" || row.model != req.model || row.protocol != req.protocol ||
        row.metric != req.metric || (req.step != 0 && row.step != req.step)) {
      continue;
    }
    ++matched;
    const double v = row.mean;
    const bool ok = req.op == "<" ? v < req.value : req.op == "<=" ? v <= req.value : req.op == ">" ? v > req.value
                                                                                     : v >= req.value;
    if (!ok) {
      failures.push_back(fmt::format("{}: start {} step {} has {} = {}", req.text, row.start, row.step, row.metric,
                                     format_number(v)));
    }
  }
  if (matched == 0) failures.push_back(req.text + ": no matching rows");
  return failures;
}

}  // namespace adherence::eval
