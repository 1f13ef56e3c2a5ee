#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>
#include <utility>

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/nn/distributions.hpp"
#include "adherence/slvm.hpp"
#include "adherence/synthetic.hpp"

using namespace adherence;
using namespace adherence::slvm;

namespace {

SlvmConfig tiny_config(int latent = 2, std::vector<Eigen::Index> hidden = {8}) {
  SlvmConfig c;
  c.latent1 = latent;
  c.latent2 = latent;
  c.hidden = std::move(hidden);
  return c;
}

struct Fixture {
  Cohort cohort;
  std::vector<std::string> ids;
  SlvmModel model;
  std::vector<PatientRecord> normalized;
  SequenceBatch batch;

  explicit Fixture(int patients, SlvmConfig config = tiny_config(), unsigned long long seed = 3) {
    cohort = synthetic_cohort({patients, seed});
    for (const auto& r : cohort.records) ids.push_back(r.id);
    model = SlvmModel(config);
    model.stats = fit_normalization(cohort, {ids.begin(), ids.end()});
    model.schema = cohort.schema;
    nn::Rng rng(seed);
    model.init(rng);
    for (const auto& r : cohort.records) normalized.push_back(normalize(r, model.stats));
    std::vector<const PatientRecord*> ptrs;
    for (const auto& r : normalized) ptrs.push_back(&r);
    batch = make_batch(ptrs);
  }
};

}  // namespace

TEST_CASE("unobserved visits add no KL and no score NLL") {
  Fixture f(4);
  SequenceBatch b = f.batch;
  b.mask.setZero();
  for (auto& x : b.x) x.setZero();
  nn::Rng rng(1);
  const ElboValues v = elbo_values(f.model, b, rng);
  CHECK(v.kl == 0.0);
  CHECK(v.score_nll == 0.0);
  CHECK(v.adherence_nll > 0.0);
}

TEST_CASE("score NLL matches the closed form for a constant decoder") {
  Fixture f(3);
  auto& mean = f.model.decoder.head.mean;
  auto& std = f.model.decoder.head.std;
  mean.weight.value.setZero();
  std.weight.value.setZero();
  const Eigen::Index d = mean.bias.value.cols();
  for (Eigen::Index j = 0; j < d; ++j) {
    mean.bias.value(0, j) = 0.1 * static_cast<double>(j) - 0.3;
    std.bias.value(0, j) = -0.5 + 0.05 * static_cast<double>(j);
  }
  double expected = 0.0;
  for (Eigen::Index i = 0; i < f.batch.size(); ++i) {
    for (int t = 0; t < kSteps; ++t) {
      if (f.batch.mask(i, t) < 0.5) continue;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double sd = std::log1p(std::exp(std.bias.value(0, j))) + nn::kMinStd;
        const double r = (f.batch.x[static_cast<size_t>(t)](i, j) - mean.bias.value(0, j)) / sd;
        expected += nn::kHalfLog2Pi + std::log(sd) + 0.5 * r * r;
      }
    }
  }
  expected /= static_cast<double>(f.batch.size());
  nn::Rng rng(5);
  CHECK(elbo_values(f.model, f.batch, rng).score_nll == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("KL is nonnegative per patient") {
  Fixture f(8);
  Tape tape(false);
  nn::Rng rng(2);
  ElboVars v = elbo_terms(tape, f.model, f.batch, {}, rng);
  CHECK((v.kl_rows.array() >= 0.0).all());
}

TEST_CASE("lagrange multipliers follow the violation sign and stay clamped") {
  LagrangeConfig cfg;
  LagrangeState s;
  s.xi_score = 10.0;
  s.xi_adherence = 2.0;
  update_lagrange(s, cfg, 12.0, 1.0);
  CHECK(s.ma_score == doctest::Approx(2.0));
  CHECK(s.lambda_score == doctest::Approx(std::exp(0.01 * 2.0)));
  CHECK(s.lambda_adherence == doctest::Approx(std::exp(-0.01)));
  const double before = s.lambda_score;
  update_lagrange(s, cfg, 10.5, 1.0);
  CHECK(s.ma_score == doctest::Approx(0.99 * 2.0 + 0.01 * 0.5));
  CHECK(s.lambda_score > before);

  LagrangeState big;
  big.lambda_score = 9999.0;
  for (int i = 0; i < 50; ++i) update_lagrange(big, cfg, 1e4, -1e4);
  CHECK(big.lambda_score == cfg.max);
  CHECK(big.lambda_adherence == cfg.min);

  LagrangeConfig frozen;
  frozen.adapt = false;
  LagrangeState still;
  update_lagrange(still, frozen, 100.0, 100.0);
  CHECK(still.lambda_score == 1.0);
  CHECK(!still.ma_initialized);
}

TEST_CASE("calibrated targets are 0.9 of the constant predictor") {
  Fixture f(12);
  const auto [xs, xa] = calibrate_targets(f.batch, 1.0);
  const auto [xs9, xa9] = calibrate_targets(f.batch, 0.9);
  CHECK(xs9 == doctest::Approx(0.9 * xs));
  CHECK(xa9 == doctest::Approx(0.9 * xa));
  // Normalized scores have unit variance, so the NLL per observed cell is
  // 0.5 * log(2 pi) + 0.5 on average.
  const double cells = f.batch.mask.sum() * kScoreDim / static_cast<double>(f.batch.size());
  CHECK(xs == doctest::Approx(cells * (nn::kHalfLog2Pi + 0.5)).epsilon(1e-9));
}

TEST_CASE("constrained loss gradients match finite differences") {
  Fixture f(3, tiny_config(2, {8}));
  LagrangeState l;
  l.lambda_score = 1.3;
  l.lambda_adherence = 0.7;
  auto loss = [&](Tape& tape) {
    nn::Rng rng(17);
    return constrained_loss(tape, f.model, l, f.batch, {}, rng);
  };
  auto params = f.model.parameters();
  const auto report = nn::grad_check(loss, params, 1e-4, 1e-6);
  INFO(report.worst_parameter, " ", report.max_relative_error);
  CHECK(report.passed);
}

TEST_CASE("two hundred steps cut the reconstruction terms by at least a fifth") {
  Fixture f(16, tiny_config(8, {32}));
  TrainConfig cfg;
  LagrangeState l;
  std::tie(l.xi_score, l.xi_adherence) = calibrate_targets(f.batch, cfg.lagrange.xi_factor);
  nn::Rng eval_rng(99);
  const ElboValues before = elbo_values(f.model, f.batch, eval_rng);
  nn::Radam opt(cfg.optimizer);
  nn::Rng rng(4);
  for (int i = 0; i < 200; ++i) train_step(f.model, l, mixup_batch(f.batch, cfg.mixup_alpha, rng), opt, cfg, rng);
  eval_rng.seed(99);
  const ElboValues after = elbo_values(f.model, f.batch, eval_rng);
  const double b = before.score_nll + before.adherence_nll;
  const double a = after.score_nll + after.adherence_nll;
  INFO(b, " -> ", a);
  CHECK(a <= 0.8 * b);
}

TEST_CASE("non-finite loss aborts the step and names the batch") {
  Fixture f(3);
  SequenceBatch b = f.batch;
  b.x[1](0, 0) = std::nan("");
  LagrangeState l;
  TrainConfig cfg;
  nn::Radam opt;
  nn::Rng rng(1);
  const Matrix before = f.model.decoder.head.mean.bias.value;
  CHECK_THROWS_WITH_AS(train_step(f.model, l, b, opt, cfg, rng), doctest::Contains(b.ids[0].c_str()), NumericError);
  CHECK(f.model.decoder.head.mean.bias.value == before);
  CHECK(opt.step_count() == 0);
}

TEST_CASE("filter returns one state per observed visit") {
  Fixture f(3, tiny_config(3));
  nn::Rng rng(8);
  auto states = filter_posterior(f.model, f.cohort.records[0], 4, rng);
  REQUIRE(states.size() == 4);
  CHECK(states[3].step == 4);
  CHECK(states[3].z1.size() == 3);
  CHECK((states[0].z1_std.array() > 0.0).all());
}

TEST_CASE("one-step prediction shapes and ranges") {
  Fixture f(6);
  nn::Rng rng(2);
  const auto p = predict_one_step(f.model, f.cohort.records[1], 2, 25, rng);
  CHECK(p.adherence.step == 2);
  CHECK(p.next_score.step == 3);
  CHECK(p.adherence.samples.size() == 25);
  CHECK(p.next_score.samples.rows() == 25);
  CHECK(p.next_score.mean.size() == kScoreDim);
  CHECK(p.adherence.probability > 0.0);
  CHECK(p.adherence.probability < 1.0);
  CHECK((p.next_score.std.array() > 0.0).all());
  CHECK_THROWS_AS(predict_one_step(f.model, f.cohort.records[1], 6, 5, rng), ValidationError);
  CHECK_THROWS_AS(predict_one_step(f.model, f.cohort.records[1], 0, 5, rng), ValidationError);
}

TEST_CASE("inferred rollout never resumes after a stop") {
  Fixture f(6);
  for (int t = 1; t <= kIntervals; ++t) {
    nn::Rng rng(static_cast<unsigned long long>(t));
    const auto traj = rollout(f.model, f.cohort.records[2], t, ActionPlan::inferred(), 40, rng);
    CHECK(traj.scores.size() == static_cast<size_t>(kSteps - t));
    CHECK(traj.adherence.size() == static_cast<size_t>(kSteps - t));
    CHECK(traj.adherence.front().provenance == Provenance::Filtered);
    CHECK(traj.scores.back().step == kSteps);
    for (Eigen::Index k = 0; k < traj.actions.rows(); ++k) {
      for (Eigen::Index c = 1; c < traj.actions.cols(); ++c) {
        CHECK(traj.actions(k, c) <= traj.actions(k, c - 1));
      }
    }
  }
}

TEST_CASE("fixed plans that break absorption are rejected") {
  Fixture f(3);
  PatientRecord r = f.cohort.records[0];
  r.y = {1, 0, 0, 0, 0};
  r.a = r.y;
  CHECK_THROWS_AS(validate_plan(ActionPlan::fixed_suffix({1, 0, 1, 0}), r, 2), ValidationError);
  CHECK_THROWS_AS(validate_plan(ActionPlan::fixed_suffix({1, 0, 0}), r, 3), ValidationError);
  CHECK_THROWS_AS(validate_plan(ActionPlan::fixed_suffix({1, 1}), r, 2), ValidationError);
  CHECK_THROWS_AS(validate_plan(ActionPlan::fixed_suffix({2, 0, 0, 0}), r, 2), ValidationError);
  CHECK_NOTHROW(validate_plan(ActionPlan::fixed_suffix({0, 0, 0, 0}), r, 2));
  CHECK_NOTHROW(validate_plan(ActionPlan::fixed_suffix({1, 1, 0, 0}), f.cohort.records[0], 2));
}

TEST_CASE("identical scenarios give exactly zero effect") {
  Fixture f(6);
  const auto res = simulate_interventions(f.model, f.cohort.records[0], 2, {{1, 1, 1, 1}, {1, 1, 1, 1}, {0, 0, 0, 0}},
                                          30, 11);
  CHECK(res.delta[0][1] == 0.0);
  CHECK(res.delta[1][0] == 0.0);
  CHECK(res.delta[0][2] == doctest::Approx(-res.delta[2][0]));
  CHECK(res.delta_normalized[0][0] == 0.0);
  const auto again = simulate_interventions(f.model, f.cohort.records[0], 2, {{1, 1, 1, 1}, {0, 0, 0, 0}}, 30, 11);
  CHECK(again.delta[0][1] == res.delta[0][2]);
}

TEST_CASE("artifact round trip preserves predictions and bytes") {
  Fixture f(5);
  const std::string bytes = serialize_artifact(manifest_fields(f.model), std::as_const(f.model).parameters());
  const Artifact art = deserialize_artifact(bytes);
  SlvmModel back = model_from_manifest(art.manifest);
  restore_parameters(art, back.parameters());
  CHECK(serialize_artifact(manifest_fields(back), std::as_const(back).parameters()) == bytes);
  nn::Rng r1(3), r2(3);
  const auto p1 = predict_one_step(f.model, f.cohort.records[0], 3, 10, r1);
  const auto p2 = predict_one_step(back, f.cohort.records[0], 3, 10, r2);
  CHECK(p1.next_score.mean == p2.next_score.mean);
  CHECK(p1.adherence.probability == p2.adherence.probability);
  CHECK_THROWS_AS(deserialize_artifact(bytes.substr(0, bytes.size() - 3)), SchemaError);
  CHECK_THROWS_AS(deserialize_artifact("nope"), SchemaError);
}

TEST_CASE("learning rate drop is configured and validated") {
  TrainConfig cfg;
  cfg.lr_drop_epoch = 3;
  cfg.lr_drop_factor = 0.5;
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.lr_drop_epoch == 3);
  CHECK(back.lr_drop_factor == 0.5);
  auto j = cfg.to_json();
  j["lr_drop_factor"] = 0.0;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ValidationError);
  j["lr_drop_factor"] = 0.5;
  j["lr_drop_epoch"] = -1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ValidationError);

  // A drop past the last epoch changes nothing; an earlier one does.
  const Cohort cohort = synthetic_cohort({12, 7});
  std::vector<std::string> ids;
  for (const auto& r : cohort.records) ids.push_back(r.id);
  TrainConfig base;
  base.max_epochs = 4;
  base.batch_size = 4;
  TrainConfig late = base, early = base;
  late.lr_drop_epoch = 4;
  early.lr_drop_epoch = 2;
  auto bytes = [&](const TrainConfig& c) {
    const auto m = fit(cohort, ids, {}, tiny_config(2, {8}), c).model;
    return serialize_artifact(manifest_fields(m), m.parameters());
  };
  CHECK(bytes(base) == bytes(late));
  CHECK(bytes(base) != bytes(early));
}

TEST_CASE("fit is deterministic and keeps the best validation epoch") {
  const Cohort cohort = synthetic_cohort({20, 7});
  std::vector<std::string> train, val;
  for (size_t i = 0; i < cohort.records.size(); ++i) (i % 4 == 0 ? val : train).push_back(cohort.records[i].id);
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.patience = 3;
  cfg.batch_size = 8;
  cfg.seed = 21;
  const auto a = fit(cohort, train, val, tiny_config(2, {8}), cfg);
  const auto b = fit(cohort, train, val, tiny_config(2, {8}), cfg);
  CHECK(serialize_artifact(manifest_fields(a.model), a.model.parameters()) ==
        serialize_artifact(manifest_fields(b.model), b.model.parameters()));
  REQUIRE(!a.history.empty());
  double best = a.history.front().validation;
  for (const auto& e : a.history) best = std::min(best, e.validation);
  CHECK(a.history[static_cast<size_t>(a.best_epoch - 1)].validation == best);
  CHECK(a.lagrange.xi_score > 0.0);
}

TEST_CASE("decoder at the target with unit std gives the Gaussian constant") {
  Fixture f(2);
  SequenceBatch b = f.batch;
  b.mask.setOnes();
  for (auto& x : b.x) x.setConstant(0.25);
  auto& head = f.model.decoder.head;
  head.mean.weight.value.setZero();
  head.mean.bias.value.setConstant(0.25);
  head.std.weight.value.setZero();
  head.std.bias.value.setConstant(std::log(std::expm1(1.0 - nn::kMinStd)));
  nn::Rng rng(1);
  CHECK(elbo_values(f.model, b, rng).score_nll == doctest::Approx(nn::kHalfLog2Pi * kScoreDim * kSteps));
}

TEST_CASE("filtering and prediction are deterministic under fixed noise") {
  Fixture f(3, tiny_config(3));
  nn::Rng r1(5), r2(5);
  CHECK(filter_posterior(f.model, f.cohort.records[0], 1, r1).size() == 1);
  CHECK_THROWS_AS(filter_posterior(f.model, f.cohort.records[0], 7, r1), ValidationError);
  r1.seed(6);
  const auto a = filter_posterior(f.model, f.cohort.records[0], 6, r1);
  const auto b = (r2.seed(6), filter_posterior(f.model, f.cohort.records[0], 6, r2));
  CHECK(a.back().z2 == b.back().z2);
  nn::Rng p1(9), p2(9);
  CHECK(predict_one_step(f.model, f.cohort.records[0], 3, 1, p1).next_score.mean ==
        predict_one_step(f.model, f.cohort.records[0], 3, 1, p2).next_score.mean);
}

TEST_CASE("a rollout from step five emits one score and one adherence step") {
  Fixture f(3);
  nn::Rng rng(2);
  const auto traj = rollout(f.model, f.cohort.records[0], 5, ActionPlan::inferred(), 8, rng);
  CHECK(traj.scores.size() == 1);
  CHECK(traj.adherence.size() == 1);
  CHECK(traj.actions.cols() == 1);
}
