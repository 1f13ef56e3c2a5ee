#include <doctest.h>

#include <cmath>

#include "adherence/attribution.hpp"
#include "adherence/error.hpp"
#include "adherence/synthetic.hpp"

using namespace adherence;
using namespace adherence::attribution;

namespace {

struct Fixture {
  Cohort cohort;
  slvm::SlvmModel model;

  Fixture() {
    cohort = synthetic_cohort({12, 8});
    std::set<std::string> ids;
    for (const auto& r : cohort.records) ids.insert(r.id);
    slvm::SlvmConfig cfg;
    cfg.latent1 = cfg.latent2 = 4;
    cfg.hidden = {16};
    model = slvm::SlvmModel(cfg);
    model.stats = fit_normalization(cohort, ids);
    model.schema = cohort.schema;
    nn::Rng rng(2);
    model.init(rng);
  }
};

}  // namespace

TEST_CASE("linear objective gives w times x") {
  Vector w(3);
  w << 0.5, -2.0, 3.0;
  Vector x(3);
  x << 1.0, 2.0, -1.5;
  const Objective f = [&](const Vector& v) { return std::make_pair(w.dot(v), Vector(w)); };
  const auto r = integrated_gradients(f, x, Vector::Zero(3), 8);
  CHECK(r.attributions.isApprox(w.cwiseProduct(x)));
  CHECK(r.residual < 1e-12);
}

TEST_CASE("constant objective attributes nothing") {
  const Objective f = [](const Vector& v) { return std::make_pair(4.0, Vector(Vector::Zero(v.size()))); };
  const auto r = integrated_gradients(f, Vector::Ones(5), Vector::Zero(5), 16);
  CHECK(r.attributions.isZero());
  CHECK_THROWS_AS(integrated_gradients(f, Vector::Ones(5), Vector::Zero(5), 4), ValidationError);
}

TEST_CASE("target selector parsing") {
  CHECK(Target::parse("mean").step == 0);
  CHECK(Target::parse("step:3").step == 3);
  CHECK(Target::parse("step:5").to_string() == "step:5");
  for (const char* bad : {"step:0", "step:6", "step:2x", "y3", ""}) CHECK_THROWS_AS(Target::parse(bad), ValidationError);
}

TEST_CASE("objective gradient matches finite differences") {
  Fixture fx;
  Options opt;
  opt.samples = 4;
  opt.seed = 9;
  const Objective f = adherence_objective(fx.model, fx.cohort.records[0], opt);
  Vector s = fx.model.stats.normalize_static(fx.cohort.records[0].s);
  const Vector g = f(s).second;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    Vector up = s, down = s;
    up(i) += h;
    down(i) -= h;
    CHECK(g(i) == doctest::Approx((f(up).first - f(down).first) / (2 * h)).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("attribution is deterministic and satisfies completeness") {
  Fixture fx;
  Options opt;
  opt.steps = 256;
  opt.seed = 5;
  const auto a = explain(fx.model, fx.cohort.records[1], opt);
  const auto b = explain(fx.model, fx.cohort.records[1], opt);
  CHECK(a.attributions == b.attributions);
  CHECK(a.residual < 1e-3);
  CHECK(a.patient == fx.cohort.records[1].id);
}

TEST_CASE("completeness residual halves when the path steps double") {
  Fixture fx;
  Options opt;
  opt.seed = 5;
  const auto& rec = fx.cohort.records[2];
  std::vector<double> logm, logr;
  for (int m : {8, 16, 32, 64}) {
    opt.steps = m;
    logm.push_back(std::log(m));
    logr.push_back(std::log(explain(fx.model, rec, opt).residual));
  }
  const double slope = (logr.back() - logr.front()) / (logm.back() - logm.front());
  MESSAGE("log-log residual slope " << slope);
  CHECK(slope > -1.5);
  CHECK(slope < -0.5);
}

TEST_CASE("a feature the model cannot see gets exactly zero") {
  Fixture fx;
  // The only path from the statics into the chain is the first posterior layer.
  Matrix& w = fx.model.posterior_init.body.layers().front().weight.value;
  REQUIRE(w.rows() == fx.model.config().score_dim + fx.model.config().static_dim);
  w.row(fx.model.config().score_dim + 2).setZero();
  Options opt;
  opt.steps = 16;
  const auto r = explain(fx.model, fx.cohort.records[0], opt);
  CHECK(r.attributions(2) == 0.0);
  CHECK(r.attributions.cwiseAbs().sum() > 0.0);
}

TEST_CASE("ranking orders by mean absolute attribution") {
  AttributionResult one;
  one.attributions = Vector(3);
  one.attributions << 0.1, -0.5, 0.3;
  auto table = rank_features({one}, {"a", "b", "c"});
  CHECK(table[0].feature == "b");
  CHECK(table[1].feature == "c");
  CHECK(table[2].feature == "a");
  CHECK(table[0].rank == 1);

  AttributionResult scaled = one;
  scaled.attributions *= 7.0;
  auto table2 = rank_features({scaled}, {"a", "b", "c"});
  for (size_t i = 0; i < 3; ++i) CHECK(table2[i].feature == table[i].feature);

  AttributionResult other;
  other.attributions = Vector(3);
  other.attributions << 0.3, 0.1, 0.3;
  table = rank_features({one, other}, {"a", "b", "c"});
  CHECK(table[0].feature == "b");
  CHECK(table[0].mean == doctest::Approx(0.3));
  CHECK(table[0].std == doctest::Approx(0.2));
  CHECK(importance_csv(table).rfind("feature,mean,std,rank\nb,0.3,0.2,1\n", 0) == 0);
  CHECK_THROWS_AS(rank_features({}, {"a"}), ValidationError);
}
