#include <doctest.h>

#include <utility>

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/lstm.hpp"
#include "adherence/synthetic.hpp"

using namespace adherence;
using namespace adherence::lstm;

namespace {

struct Fixture {
  Cohort cohort;
  LstmModel model;
  std::vector<PatientRecord> normalized;
  SequenceBatch batch;

  Fixture(int patients, Eigen::Index hidden, int layers) {
    cohort = synthetic_cohort({patients, 3});
    std::set<std::string> ids;
    for (const auto& r : cohort.records) ids.insert(r.id);
    LstmConfig cfg;
    cfg.hidden = hidden;
    cfg.layers = layers;
    model = LstmModel(cfg);
    model.stats = fit_normalization(cohort, ids);
    nn::Rng rng(3);
    model.init(rng);
    for (const auto& r : cohort.records) normalized.push_back(normalize(r, model.stats));
    std::vector<const PatientRecord*> ptrs;
    for (const auto& r : normalized) ptrs.push_back(&r);
    batch = make_batch(ptrs);
    model.target_variance = target_variance(batch);
  }
};

double eval_loss(const LstmModel& m, const SequenceBatch& b) {
  Tape tape(false);
  return loss_terms(tape, m, b, {}).loss.value()(0, 0);
}

}  // namespace

TEST_CASE("zero weights give an even adherence probability") {
  Fixture f(3, 8, 1);
  for (nn::Parameter* p : f.model.parameters()) p->value.setZero();
  const Prediction p = forward(f.model, f.cohort.records[0], 3);
  CHECK(p.adherence == 0.5);
  CHECK(p.next_score.isApprox(f.model.stats.score_mean));
}

TEST_CASE("forward is a pure function") {
  Fixture f(3, 8, 2);
  const Prediction a = forward(f.model, f.cohort.records[1], 4);
  const Prediction b = forward(f.model, f.cohort.records[1], 4);
  CHECK(a.next_score == b.next_score);
  CHECK(a.adherence == b.adherence);
  CHECK(a.adherence > 0.0);
  CHECK(a.adherence < 1.0);
}

TEST_CASE("history length mismatch is rejected") {
  Fixture f(2, 8, 1);
  const auto& r = f.cohort.records[0];
  CHECK_THROWS_AS(forward(f.model, r.x.topRows(3), {1}, r.s), ValidationError);
  CHECK_THROWS_AS(forward(f.model, r.x.topRows(6), {1, 1, 1, 1, 1}, r.s), ValidationError);
  CHECK_NOTHROW(forward(f.model, r.x.topRows(3), {1, 1}, r.s));
}

TEST_CASE("NMSE of the mean predictor is one") {
  Rng rng(4);
  std::normal_distribution<double> n(2.0, 3.0);
  Matrix targets(200, 4);
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = n(rng);
  const Vector var = column_variance(targets);
  const Matrix mean = targets.colwise().mean().replicate(200, 1);
  CHECK(std::abs(nmse(mean, targets, var) - 1.0) < 1e-6);
  CHECK(nmse(targets, targets, var) == 0.0);
}

TEST_CASE("perfect predictions cost nothing in the score term") {
  Fixture f(4, 8, 1);
  // With the input weights zeroed the outputs ignore the scores, so they can
  // be written back as targets without changing themselves.
  f.model.stack.layers()[0].w_input.value.setZero();
  Tape tape(false);
  const StepOutputs out = unroll(tape, f.model, f.batch, {});
  SequenceBatch perfect = f.batch;
  for (int t = 0; t < kIntervals; ++t) perfect.x[static_cast<size_t>(t + 1)] = out.score[static_cast<size_t>(t)].value();
  perfect.mask.setOnes();
  Tape check(false);
  CHECK(loss_terms(check, f.model, perfect, {}).nmse.value()(0, 0) == 0.0);
}

TEST_CASE("LSTM loss gradients match finite differences") {
  Fixture f(3, 8, 1);
  auto loss = [&](Tape& tape) { return loss_terms(tape, f.model, f.batch, {}).loss; };
  auto params = f.model.parameters();
  const auto report = nn::grad_check(loss, params, 1e-4, 1e-6);
  INFO(report.worst_parameter, " ", report.max_relative_error);
  CHECK(report.passed);
}

TEST_CASE("two hundred LSTM steps cut the loss by at least a fifth") {
  Fixture f(16, 32, 1);
  TrainConfig cfg;
  cfg.dropout = 0.0;
  const double before = eval_loss(f.model, f.batch);
  nn::Radam opt(cfg.optimizer);
  nn::Rng rng(4);
  for (int i = 0; i < 200; ++i) train_step(f.model, mixup_batch(f.batch, cfg.mixup_alpha, rng), opt, cfg, rng);
  const double after = eval_loss(f.model, f.batch);
  INFO(before, " -> ", after);
  CHECK(after <= 0.8 * before);
}

TEST_CASE("rollout feeds back absorbing labels") {
  Fixture f(4, 8, 1);
  for (int t = 1; t <= kIntervals; ++t) {
    const Trajectory traj = rollout(f.model, f.cohort.records[0], t);
    CHECK(traj.scores.size() == static_cast<size_t>(kSteps - t));
    CHECK(traj.fed_back.size() == traj.adherence.size());
    for (size_t i = 1; i < traj.fed_back.size(); ++i) CHECK(traj.fed_back[i] <= traj.fed_back[i - 1]);
  }
  // Force a stop: a large negative adherence bias.
  f.model.adherence_head.bias.value.setConstant(-50.0);
  const Trajectory stop = rollout(f.model, f.cohort.records[0], 2);
  for (int label : stop.fed_back) CHECK(label == 0);
  f.model.adherence_head.bias.value.setConstant(50.0);
  PatientRecord stopped = f.cohort.records[0];
  stopped.y = {1, 0, 0, 0, 0};
  stopped.a = stopped.y;
  for (int label : rollout(f.model, stopped, 3).fed_back) CHECK(label == 0);
  CHECK(rollout(f.model, f.cohort.records[0], 5).scores.size() == 1);
}

TEST_CASE("LSTM artifact round trip") {
  Fixture f(3, 8, 2);
  const std::string bytes = serialize_artifact(manifest_fields(f.model), std::as_const(f.model).parameters());
  const Artifact art = deserialize_artifact(bytes);
  LstmModel back = model_from_manifest(art.manifest);
  restore_parameters(art, back.parameters());
  CHECK(forward(back, f.cohort.records[2], 3).next_score == forward(f.model, f.cohort.records[2], 3).next_score);
  CHECK_THROWS_AS(model_from_manifest(nlohmann::json{{"model_kind", "slvm"}}), SchemaError);
}
