#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "adherence/error.hpp"
#include "adherence/eval.hpp"
#include "adherence/models.hpp"
#include "adherence/synthetic.hpp"
#include "adherence/text.hpp"

using namespace adherence;
using namespace adherence::eval;

namespace {

std::vector<std::string> all_ids(const Cohort& c) {
  std::vector<std::string> ids;
  for (const auto& r : c.records) ids.push_back(r.id);
  return ids;
}

slvm::SlvmModel small_slvm(const Cohort& c, unsigned long long seed) {
  slvm::SlvmConfig cfg;
  cfg.latent1 = cfg.latent2 = 3;
  cfg.hidden = {8};
  slvm::SlvmModel m(cfg);
  const auto ids = all_ids(c);
  m.stats = fit_normalization(c, {ids.begin(), ids.end()});
  m.schema = c.schema;
  nn::Rng rng(seed);
  m.init(rng);
  return m;
}

lstm::LstmModel small_lstm(const Cohort& c, unsigned long long seed) {
  lstm::LstmConfig cfg;
  cfg.hidden = 6;
  cfg.layers = 1;
  lstm::LstmModel m(cfg);
  const auto ids = all_ids(c);
  m.stats = fit_normalization(c, {ids.begin(), ids.end()});
  m.schema = c.schema;
  m.target_variance = Vector::Ones(c.schema.score_dim());
  nn::Rng rng(seed);
  m.init(rng);
  return m;
}

}  // namespace

TEST_CASE("rmse of exact predictions is zero") {
  Matrix p = Matrix::Random(4, 3);
  const RmseResult r = rmse(p, p, {true, true, true, true});
  CHECK(r.aggregate == 0.0);
  CHECK(r.per_dim.isZero());
}

TEST_CASE("rmse of a constant 5 against 0 and 10 is 5") {
  Matrix pred = Matrix::Constant(2, 1, 5.0);
  Matrix target(2, 1);
  target << 0, 10;
  CHECK(rmse(pred, target, {true, true}).aggregate == doctest::Approx(5.0));
}

TEST_CASE("rmse pools dims and skips masked rows") {
  Matrix pred = Matrix::Zero(3, 2);
  Matrix target(3, 2);
  target << 3, 4, 100, 100, 0, 0;
  const RmseResult r = rmse(pred, target, {true, false, true});
  CHECK(r.count == 2);
  CHECK(r.per_dim(0) == doctest::Approx(std::sqrt(4.5)));
  CHECK(r.per_dim(1) == doctest::Approx(std::sqrt(8.0)));
  CHECK(r.aggregate == doctest::Approx(std::sqrt(25.0 / 4)));
  CHECK_THROWS_AS(rmse(pred, target, {false, false, false}), ValidationError);
  CHECK_THROWS_AS(rmse(pred, Matrix::Zero(3, 3), {true, true, true}), DimensionError);
}

TEST_CASE("doubling raw values doubles rmse") {
  Matrix pred = Matrix::Random(5, 4), target = Matrix::Random(5, 4);
  const std::vector<bool> mask(5, true);
  CHECK(rmse(2 * pred, 2 * target, mask).aggregate == doctest::Approx(2 * rmse(pred, target, mask).aggregate));
}

TEST_CASE("confusion fixture TP2 FP1 FN1 TN1") {
  const std::vector<double> probs{0.9, 0.8, 0.7, 0.2, 0.1};
  const std::vector<int> labels{1, 1, 0, 1, 0};
  const auto m = classification_metrics(probs, labels, 0.5);
  CHECK(m.tp == 2);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 1);
  CHECK(m.precision == doctest::Approx(2.0 / 3));
  CHECK(m.recall == doctest::Approx(2.0 / 3));
  CHECK(m.f1 == doctest::Approx(2.0 / 3));
  CHECK(m.accuracy == doctest::Approx(3.0 / 5));
}

TEST_CASE("classification edge cases") {
  const auto perfect = classification_metrics({1.0, 0.0, 0.6}, {1, 0, 1});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  const auto none = classification_metrics({0.1, 0.2}, {0, 0});
  CHECK(none.accuracy == 1.0);
  CHECK(none.precision_undefined);
  CHECK(none.recall_undefined);
  CHECK(none.f1_undefined);
  CHECK(none.precision == 0.0);

  const auto flipped = classification_metrics({0.1, 0.2, 0.9}, {0, 0, 1}, 0.5, 0);
  CHECK(flipped.tp == 2);
  CHECK(flipped.tn == 1);

  CHECK_THROWS_AS(classification_metrics({}, {}), ValidationError);
  CHECK_THROWS_AS(classification_metrics({0.5}, {2}), ValidationError);
}

TEST_CASE("one patient one-step yields exactly one prediction at step five") {
  Cohort c = synthetic_cohort({8, 2});
  std::vector<AnyModel> models{small_slvm(c, 1)};
  const auto recs = run_protocol(models, c, {c.records[0].id}, Protocol::OneStep, 5, 7);
  CHECK(recs.size() == 5);
  CHECK(std::count_if(recs.begin(), recs.end(), [](const auto& p) { return p.step == 5; }) == 1);
  const auto rolled = run_protocol(models, c, {c.records[0].id}, Protocol::Rollout, 5, 7);
  CHECK(rolled.size() == 15);
  for (const auto& p : rolled) CHECK(p.step >= p.start);
}

TEST_CASE("protocol rejects a model trained on another layout") {
  Cohort c = synthetic_cohort({8, 2});
  Cohort other = c;
  other.schema.score_names[0] = "renamed";
  std::vector<AnyModel> models{small_lstm(c, 1)};
  CHECK_THROWS_AS(run_protocol(models, other, {c.records[0].id}, Protocol::OneStep, 1, 0), SchemaError);
}

TEST_CASE("metric table invariants over two folds") {
  Cohort c = synthetic_cohort({12, 4});
  std::vector<AnyModel> models{small_slvm(c, 1), small_slvm(c, 2)};
  const auto ids = all_ids(c);
  auto recs = run_protocol(models, c, ids, Protocol::OneStep, 8, 11);
  const MetricTable table = metric_table(recs, "slvm", Protocol::OneStep, c.schema, 0.5);

  SUBCASE("five step rows per metric in the aggregate") {
    for (const char* metric : {"accuracy", "precision", "recall", "f1", "rmse"}) {
      int n = 0;
      for (const auto& r : table) n += r.fold == kAggregateFold && r.metric == metric && r.dim == "all";
      CHECK(n == 5);
    }
  }

  SUBCASE("F1 identity and unit range on fold rows") {
    for (const auto& r : table) {
      if (r.fold == kAggregateFold || r.metric != "f1") continue;
      const auto p = find_row(table, r.model, r.protocol, r.fold, r.start, r.step, "precision");
      const auto q = find_row(table, r.model, r.protocol, r.fold, r.start, r.step, "recall");
      REQUIRE(p);
      REQUIRE(q);
      if (p->mean + q->mean > 0) CHECK(r.mean == doctest::Approx(2 * p->mean * q->mean / (p->mean + q->mean)));
      for (double v : {r.mean, p->mean, q->mean}) CHECK((v >= 0.0 && v <= 1.0));
    }
  }

  SUBCASE("aggregate rows recompute from fold rows") {
    for (const auto& agg : table) {
      if (agg.fold != kAggregateFold) continue;
      std::vector<double> v;
      for (const char* fold : {"0", "1"}) {
        const auto r = find_row(table, agg.model, agg.protocol, fold, agg.start, agg.step, agg.metric, agg.dim);
        REQUIRE(r);
        v.push_back(r->mean);
      }
      CHECK(agg.mean == doctest::Approx((v[0] + v[1]) / 2));
      CHECK(agg.std == doctest::Approx(std::abs(v[0] - v[1]) / 2));
    }
  }

  SUBCASE("patient order does not matter") {
    std::mt19937 g(5);
    std::shuffle(recs.begin(), recs.end(), g);
    CHECK(metric_table(recs, "slvm", Protocol::OneStep, c.schema, 0.5) == table);
  }

  SUBCASE("latent samples produce a spread") {
    const auto r = find_row(table, "slvm", "one-step", "0", 2, 2, "rmse");
    REQUIRE(r);
    CHECK(r->sample_std > 0.0);
  }
}

TEST_CASE("scaling raw targets and predictions doubles every rmse row") {
  Cohort c = synthetic_cohort({6, 4});
  std::vector<AnyModel> models{small_lstm(c, 3)};
  auto recs = run_protocol(models, c, all_ids(c), Protocol::Rollout, 1, 0);
  const MetricTable base = metric_table(recs, "lstm", Protocol::Rollout, c.schema, 0.5);
  for (auto& p : recs) {
    p.score *= 2;
    p.target *= 2;
  }
  const MetricTable scaled = metric_table(recs, "lstm", Protocol::Rollout, c.schema, 0.5);
  REQUIRE(base.size() == scaled.size());
  for (size_t i = 0; i < base.size(); ++i) {
    if (base[i].metric == "rmse") CHECK(scaled[i].mean == doctest::Approx(2 * base[i].mean));
    else CHECK(scaled[i].mean == base[i].mean);
  }
}

TEST_CASE("random adherence is right about half the time") {
  Cohort c = synthetic_cohort({800, 9});
  const auto recs = random_baseline(BaselineSpec::from_cohort(c, 3), c, all_ids(c));
  const auto table = metric_table(recs, "random", Protocol::OneStep, c.schema, 0.5);
  double acc = 0;
  for (int t = 1; t <= kIntervals; ++t) acc += find_row(table, "random", "one-step", "aggregate", t, t, "accuracy")->mean;
  CHECK(acc / kIntervals == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("baseline support defaults and degenerate support") {
  Cohort c = synthetic_cohort({30, 9});
  const BaselineSpec spec = BaselineSpec::from_cohort(c, 1);
  CHECK(spec.lower(0) == 0.0);
  CHECK(spec.upper(0) == 10.0);
  CHECK(spec.lower(10) == 0.0);
  double max_med = 0;
  for (const auto& r : c.records) {
    for (int t = 0; t < kSteps; ++t) {
      if (r.mask[static_cast<size_t>(t)]) max_med = std::max(max_med, r.x(t, 10));
    }
  }
  CHECK(spec.upper(10) == max_med);

  BaselineSpec flat = spec;
  flat.lower.setConstant(3.0);
  flat.upper.setConstant(3.0);
  const auto recs = random_baseline(flat, c, all_ids(c));
  for (const auto& p : recs) CHECK(p.score.isApprox(Vector::Constant(11, 3.0)));
  CHECK(random_baseline(spec, c, all_ids(c))[7].score == random_baseline(spec, c, all_ids(c))[7].score);
}

TEST_CASE("metric csv round trips and is header only when empty") {
  CHECK(metric_csv({}) == std::string(kMetricColumns) + "\n");
  CHECK(parse_metric_csv(metric_csv({})).empty());

  Cohort c = synthetic_cohort({6, 4});
  std::vector<AnyModel> models{small_slvm(c, 1)};
  const auto table = metric_table(run_protocol(models, c, all_ids(c), Protocol::OneStep, 4, 2), "slvm, v1",
                                  Protocol::OneStep, c.schema, 0.5);
  CHECK(parse_metric_csv(metric_csv(table)) == table);
  CHECK_THROWS_AS(parse_metric_csv("a,b\n"), SchemaError);
}

TEST_CASE("histogram matches a hand count") {
  CHECK(histogram({0.0, 0.5, 1.0, 9.99, 10.0, 11.0, 5.0}, 0, 10, 10) ==
        std::vector<int>{2, 1, 0, 0, 0, 1, 0, 0, 0, 2});
  CHECK(histogram({2.0, 2.0}, 2, 2, 3) == std::vector<int>{2, 0, 0});

  Cohort c = synthetic_cohort({20, 5});
  const auto rows = parse_csv(histogram_csv(c, 5));
  CHECK(rows[0] == std::vector<std::string>{"dim", "visit", "bin_lower", "bin_upper", "count"});
  int total = 0, expected = 0;
  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() == 5 && rows[i][0] == c.schema.score_names[0] && rows[i][1] == "1") total += std::stoi(rows[i][4]);
  }
  for (const auto& r : c.records) expected += r.mask[0];
  CHECK(total == expected);
}

TEST_CASE("report files land in the output directory") {
  const auto dir = std::filesystem::temp_directory_path() / "adherence_eval_report";
  std::filesystem::remove_all(dir);
  Cohort c = synthetic_cohort({6, 4});
  emit_report({}, c, dir);
  for (const char* f : {"metrics.csv", "rmse_long.csv", "classification_long.csv", "score_histograms.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  write_file(dir / "blocker", "x");
  CHECK_THROWS_AS(emit_report({}, c, dir / "blocker" / "sub"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model handles round trip through bytes") {
  Cohort c = synthetic_cohort({6, 4});
  const nlohmann::json run{{"seed", 4}};
  for (AnyModel m : {AnyModel{small_slvm(c, 1)}, AnyModel{small_lstm(c, 1)}}) {
    const std::string bytes = model_bytes(m, run);
    const LoadedModel back = parse_model(bytes);
    CHECK(kind_of(back.model) == kind_of(m));
    CHECK(model_bytes(back.model, run) == bytes);
    CHECK(back.manifest.at("config_hash").get<std::string>().size() == 64);
  }
  CHECK(parse_model_kind("lstm") == ModelKind::Lstm);
  CHECK_THROWS_AS(parse_model_kind("gru"), ValidationError);
}

TEST_CASE("requirements check aggregate rows") {
  MetricTable t;
  for (int step = 1; step <= 2; ++step) {
    MetricRow r;
    r.model = "slvm";
    r.protocol = "one-step";
    r.fold = kAggregateFold;
    r.start = r.step = step;
    r.metric = "rmse";
    r.dim = "all";
    r.mean = step;
    t.push_back(r);
  }
  CHECK(check_requirement(t, Requirement::parse("slvm/one-step/rmse/all<4.55")).empty());
  CHECK(check_requirement(t, Requirement::parse("slvm/one-step/rmse/all <= 1.5")).size() == 1);
  CHECK(check_requirement(t, Requirement::parse("slvm/one-step/rmse/1<=1")).empty());
  CHECK(check_requirement(t, Requirement::parse("lstm/one-step/rmse/all<9")).size() == 1);
  CHECK_THROWS_AS(Requirement::parse("slvm/rmse<3"), ValidationError);
}
