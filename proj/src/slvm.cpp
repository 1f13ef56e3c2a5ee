#include "adherence/slvm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/nn/distributions.hpp"

namespace adherence::slvm {

using nlohmann::json;
using nn::ForwardMode;
using nn::GaussianVars;
using nn::Rng;
using nn::concat_cols;

namespace {

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  }
  return out;
}

Var reparameterize(const GaussianVars& d, const Matrix& eps) { return add(d.mean, mask_mul(d.std, eps)); }

Var mean_rows(Var v) { return scale(sum(v), 1.0 / static_cast<double>(v.rows())); }

Var column(Tape& tape, const Matrix& m, Eigen::Index c) { return tape.constant(m.col(c)); }

LatentStep finish_z2(Tape& tape, const SlvmModel& m, LatentStep step, const LatentStep* prev, Var a,
                     const ForwardMode& mode, Rng& rng) {
  if (prev == nullptr) {
    step.z2_dist = m.z2_init.forward(tape, step.z1, mode);
  } else {
    step.z2_dist = m.z2_trans.forward(tape, concat_cols({step.z1, prev->z2, a}), mode);
  }
  step.z2 = reparameterize(step.z2_dist, standard_normal(step.z1.rows(), m.config().latent2, rng));
  return step;
}

void check_step(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) throw ValidationError(fmt::format("{} must be in [{}, {}], got {}", what, lo, hi, t));
}

Matrix replicate(const Vector& v, Eigen::Index rows) { return v.transpose().replicate(rows, 1); }

/// Filters a normalized record through visits 1..t on `rows` identical rows.
std::vector<LatentStep> filter_rows(Tape& tape, const SlvmModel& m, const PatientRecord& norm, int t,
                                    Eigen::Index rows, Rng& rng) {
  return filter_chain(tape, m, norm, tape.constant(replicate(norm.s, rows)), t, rng);
}

ScoreDistribution summarize_scores(const SlvmModel& m, const GaussianVars& d, int step) {
  const Matrix& mu = d.mean.value();
  const Matrix& sd = d.std.value();
  const double k = static_cast<double>(mu.rows());
  Vector mean = mu.colwise().mean().transpose();
  Vector spread = (mu.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum().transpose() / k;
  Vector noise = sd.cwiseAbs2().colwise().mean().transpose();
  ScoreDistribution out;
  out.step = step;
  out.mean = m.stats.denormalize_scores(mean);
  out.std = (spread + noise).cwiseSqrt().cwiseProduct(m.stats.score_std);
  out.samples = m.stats.denormalize_score_rows(mu);
  out.provenance = Provenance::PriorRollout;
  return out;
}

AdherencePrediction summarize_adherence(Var p, int step, Provenance provenance) {
  AdherencePrediction out;
  out.step = step;
  out.samples = p.value().col(0);
  out.probability = out.samples.mean();
  out.provenance = provenance;
  return out;
}

std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records) {
  std::vector<const PatientRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

json SlvmConfig::to_json() const {
  return {{"static_dim", static_dim}, {"score_dim", score_dim}, {"latent1", latent1},
          {"latent2", latent2},       {"hidden", hidden},       {"threshold", threshold}};
}

SlvmConfig SlvmConfig::from_json(const json& j) {
  SlvmConfig c;
  c.static_dim = j.value("static_dim", c.static_dim);
  c.score_dim = j.value("score_dim", c.score_dim);
  c.latent1 = j.value("latent1", c.latent1);
  c.latent2 = j.value("latent2", c.latent2);
  c.hidden = j.value("hidden", c.hidden);
  c.threshold = j.value("threshold", c.threshold);
  return c;
}

SlvmModel::SlvmModel(SlvmConfig config) : config_(std::move(config)) {
  const Eigen::Index xd = config_.score_dim;
  const Eigen::Index sd = config_.static_dim;
  const Eigen::Index l1 = config_.latent1;
  const Eigen::Index l2 = config_.latent2;
  const auto& h = config_.hidden;
  if (xd <= 0 || sd < 0 || l1 <= 0 || l2 <= 0) throw DimensionError("slvm: dimensions must be positive");
  posterior_init = nn::GaussianNet("slvm.posterior_init", xd + sd, h, l1);
  posterior_trans = nn::GaussianNet("slvm.posterior_trans", xd + l2 + 1, h, l1);
  prior_trans = nn::GaussianNet("slvm.prior_trans", l2 + 1, h, l1);
  z2_init = nn::GaussianNet("slvm.z2_init", l1, h, l2);
  z2_trans = nn::GaussianNet("slvm.z2_trans", l1 + l2 + 1, h, l2);
  decoder = nn::GaussianNet("slvm.decoder", l1 + l2, h, xd);
  adherence = nn::BernoulliNet("slvm.adherence", l1 + l2, h);
  schema = CohortSchema::generic(config_.static_dim, config_.score_dim);
  stats.static_mean = Vector::Zero(sd);
  stats.static_std = Vector::Ones(sd);
  stats.score_mean = Vector::Zero(xd);
  stats.score_std = Vector::Ones(xd);
}

void SlvmModel::init(Rng& rng) {
  posterior_init.init(rng);
  posterior_trans.init(rng);
  prior_trans.init(rng);
  z2_init.init(rng);
  z2_trans.init(rng);
  decoder.init(rng);
  adherence.init(rng);
}

std::vector<Parameter*> SlvmModel::parameters() {
  std::vector<Parameter*> out;
  nn::collect(out, posterior_init);
  nn::collect(out, posterior_trans);
  nn::collect(out, prior_trans);
  nn::collect(out, z2_init);
  nn::collect(out, z2_trans);
  nn::collect(out, decoder);
  nn::collect(out, adherence);
  return out;
}

std::vector<const Parameter*> SlvmModel::parameters() const {
  auto mut = const_cast<SlvmModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

// ---------------------------------------------------------------------------

LatentStep initial_posterior(Tape& tape, const SlvmModel& m, Var x, Var s, const ForwardMode& mode, Rng& rng) {
  LatentStep step;
  step.z1_dist = m.posterior_init.forward(tape, concat_cols({x, s}), mode);
  step.z1 = reparameterize(step.z1_dist, standard_normal(x.rows(), m.config().latent1, rng));
  return finish_z2(tape, m, step, nullptr, Var{}, mode, rng);
}

LatentStep initial_prior(Tape& tape, const SlvmModel& m, Eigen::Index rows, const ForwardMode& mode, Rng& rng) {
  LatentStep step;
  step.z1_dist.mean = tape.constant(Matrix::Zero(rows, m.config().latent1));
  step.z1_dist.std = tape.constant(Matrix::Ones(rows, m.config().latent1));
  step.z1 = reparameterize(step.z1_dist, standard_normal(rows, m.config().latent1, rng));
  return finish_z2(tape, m, step, nullptr, Var{}, mode, rng);
}

LatentStep transition_posterior(Tape& tape, const SlvmModel& m, const LatentStep& prev, Var x, Var a,
                                const ForwardMode& mode, Rng& rng) {
  LatentStep step;
  step.z1_dist = m.posterior_trans.forward(tape, concat_cols({x, prev.z2, a}), mode);
  step.z1 = reparameterize(step.z1_dist, standard_normal(x.rows(), m.config().latent1, rng));
  return finish_z2(tape, m, step, &prev, a, mode, rng);
}

LatentStep transition_prior(Tape& tape, const SlvmModel& m, const LatentStep& prev, Var a, const ForwardMode& mode,
                            Rng& rng) {
  LatentStep step;
  step.z1_dist = m.prior_trans.forward(tape, concat_cols({prev.z2, a}), mode);
  step.z1 = reparameterize(step.z1_dist, standard_normal(a.rows(), m.config().latent1, rng));
  return finish_z2(tape, m, step, &prev, a, mode, rng);
}

GaussianVars decode_scores(Tape& tape, const SlvmModel& m, const LatentStep& step, const ForwardMode& mode) {
  return m.decoder.forward(tape, concat_cols({step.z1, step.z2}), mode);
}

Var adherence_prob(Tape& tape, const SlvmModel& m, const LatentStep& step, const ForwardMode& mode) {
  return m.adherence.forward(tape, concat_cols({step.z1, step.z2}), mode);
}

ElboVars elbo_terms(Tape& tape, const SlvmModel& m, const SequenceBatch& batch, const ForwardMode& mode, Rng& rng) {
  const Eigen::Index rows = batch.size();
  const int l1 = m.config().latent1;
  if (batch.s.cols() != m.config().static_dim || batch.x[0].cols() != m.config().score_dim) {
    throw DimensionError(fmt::format("slvm: batch has {} statics / {} scores, model expects {} / {}", batch.s.cols(),
                                     batch.x[0].cols(), m.config().static_dim, m.config().score_dim));
  }
  Var s = tape.constant(batch.s);
  Var kl = tape.constant(Matrix::Zero(rows, 1));
  Var score = tape.constant(Matrix::Zero(rows, 1));
  Var adh = tape.constant(Matrix::Zero(rows, 1));

  LatentStep prev;
  for (int t = 0; t < kSteps; ++t) {
    const Matrix observed = batch.mask.col(t);
    const Matrix eps = standard_normal(rows, l1, rng);
    Var x = tape.constant(batch.x[static_cast<size_t>(t)]);
    Var a;
    GaussianVars q;
    GaussianVars p;
    if (t == 0) {
      q = m.posterior_init.forward(tape, concat_cols({x, s}), mode);
      p.mean = tape.constant(Matrix::Zero(rows, l1));
      p.std = tape.constant(Matrix::Ones(rows, l1));
    } else {
      a = column(tape, batch.a, t - 1);
      q = m.posterior_trans.forward(tape, concat_cols({x, prev.z2, a}), mode);
      p = m.prior_trans.forward(tape, concat_cols({prev.z2, a}), mode);
    }
    // Rows without an observation follow the prior, which costs no KL.
    Var obs = tape.constant(observed);
    Var unobs = tape.constant(Matrix::Ones(rows, 1) - observed);
    LatentStep step;
    step.z1_dist.mean = mul_col(q.mean, obs) + mul_col(p.mean, unobs);
    step.z1_dist.std = mul_col(q.std, obs) + mul_col(p.std, unobs);
    step.z1 = reparameterize(step.z1_dist, eps);
    step = finish_z2(tape, m, step, t == 0 ? nullptr : &prev, a, mode, rng);

    kl = kl + mask_mul(nn::gaussian_kl_diag(q.mean, q.std, p.mean, p.std), observed);
    GaussianVars dec = decode_scores(tape, m, step, mode);
    score = score + mask_mul(nn::gaussian_nll(batch.x[static_cast<size_t>(t)], dec.mean, dec.std), observed);
    if (t < kIntervals) {
      adh = adh + nn::bce(adherence_prob(tape, m, step, mode), batch.y.col(t));
    }
    prev = step;
  }
  ElboVars out;
  out.kl_rows = kl.value();
  out.kl = mean_rows(kl);
  out.score_nll = mean_rows(score);
  out.adherence_nll = mean_rows(adh);
  return out;
}

ElboValues elbo_values(const SlvmModel& m, const SequenceBatch& batch, Rng& rng) {
  Tape tape(false);
  ElboVars v = elbo_terms(tape, m, batch, ForwardMode{}, rng);
  return {v.kl.value()(0, 0), v.score_nll.value()(0, 0), v.adherence_nll.value()(0, 0)};
}

std::vector<LatentStep> filter_chain(Tape& tape, const SlvmModel& m, const PatientRecord& norm, Var s, int t,
                                     Rng& rng) {
  check_step(t, 1, kSteps, "filter step");
  const ForwardMode eval;
  const Eigen::Index rows = s.value().rows();
  std::vector<LatentStep> chain;
  for (int v = 0; v < t; ++v) {
    Var x = tape.constant(replicate(norm.x.row(v).transpose(), rows));
    if (v == 0) {
      chain.push_back(norm.mask[0] ? initial_posterior(tape, m, x, s, eval, rng)
                                   : initial_prior(tape, m, rows, eval, rng));
    } else {
      Var a = tape.constant(Matrix::Constant(rows, 1, norm.a[static_cast<size_t>(v - 1)]));
      chain.push_back(norm.mask[static_cast<size_t>(v)]
                          ? transition_posterior(tape, m, chain.back(), x, a, eval, rng)
                          : transition_prior(tape, m, chain.back(), a, eval, rng));
    }
  }
  return chain;
}

std::vector<LatentState> filter_posterior(const SlvmModel& m, const PatientRecord& record, int t, Rng& rng) {
  check_step(t, 1, kSteps, "filter step");
  const PatientRecord norm = normalize(record, m.stats);
  Tape tape(false);
  auto chain = filter_rows(tape, m, norm, t, 1, rng);
  std::vector<LatentState> out;
  for (size_t i = 0; i < chain.size(); ++i) {
    const LatentStep& c = chain[i];
    out.push_back({static_cast<int>(i) + 1, c.z1.value().row(0).transpose(), c.z1_dist.mean.value().row(0).transpose(),
                   c.z1_dist.std.value().row(0).transpose(), c.z2.value().row(0).transpose(),
                   c.z2_dist.mean.value().row(0).transpose(), c.z2_dist.std.value().row(0).transpose()});
  }
  return out;
}

// ---------------------------------------------------------------------------

void update_lagrange(LagrangeState& state, const LagrangeConfig& config, double score_nll, double adherence_nll) {
  if (!config.adapt) return;
  const double cs = score_nll - state.xi_score;
  const double ca = adherence_nll - state.xi_adherence;
  if (!state.ma_initialized) {
    state.ma_score = cs;
    state.ma_adherence = ca;
    state.ma_initialized = true;
  } else {
    state.ma_score = config.ma_decay * state.ma_score + (1.0 - config.ma_decay) * cs;
    state.ma_adherence = config.ma_decay * state.ma_adherence + (1.0 - config.ma_decay) * ca;
  }
  state.lambda_score = std::clamp(state.lambda_score * std::exp(config.eta * state.ma_score), config.min, config.max);
  state.lambda_adherence =
      std::clamp(state.lambda_adherence * std::exp(config.eta * state.ma_adherence), config.min, config.max);
}

std::pair<double, double> calibrate_targets(const SequenceBatch& train, double factor) {
  const Eigen::Index rows = train.size();
  if (rows == 0) throw ValidationError("calibrate_targets: empty training batch");
  const Eigen::Index d = train.x[0].cols();

  Vector mean = Vector::Zero(d);
  Vector count = Vector::Zero(d);
  for (int t = 0; t < kSteps; ++t) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (train.mask(i, t) > 0.5) {
        mean += train.x[static_cast<size_t>(t)].row(i).transpose();
        count.array() += 1.0;
      }
    }
  }
  mean = mean.cwiseQuotient(count.cwiseMax(1.0));
  double score = 0.0;
  for (int t = 0; t < kSteps; ++t) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (train.mask(i, t) > 0.5) {
        const Vector r = train.x[static_cast<size_t>(t)].row(i).transpose() - mean;
        score += static_cast<double>(d) * nn::kHalfLog2Pi + 0.5 * r.squaredNorm();
      }
    }
  }
  const double base = train.y.mean();
  double adh = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (int t = 0; t < kIntervals; ++t) adh += nn::bce(base, train.y(i, t));
  }
  const double n = static_cast<double>(rows);
  return {factor * score / n, factor * adh / n};
}

Var constrained_loss(Tape& tape, const SlvmModel& m, const LagrangeState& lagrange, const SequenceBatch& batch,
                     const ForwardMode& mode, Rng& rng, ElboVars* terms) {
  ElboVars v = elbo_terms(tape, m, batch, mode, rng);
  Var loss = v.kl + scale(add_scalar(v.score_nll, -lagrange.xi_score), lagrange.lambda_score) +
             scale(add_scalar(v.adherence_nll, -lagrange.xi_adherence), lagrange.lambda_adherence);
  if (terms != nullptr) *terms = v;
  return loss;
}

StepMetrics train_step(SlvmModel& m, LagrangeState& lagrange, const SequenceBatch& batch, nn::Radam& optimizer,
                       const TrainConfig& config, Rng& rng) {
  Tape tape;
  ForwardMode mode{true, config.dropout, &rng};
  ElboVars terms;
  Var loss = constrained_loss(tape, m, lagrange, batch, mode, rng, &terms);
  const double value = loss.value()(0, 0);
  if (!std::isfinite(value)) {
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
    throw NumericError("slvm: non-finite loss on batch [" + ids + "]");
  }
  tape.backward(loss);
  auto params = m.parameters();
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) grads.push_back(tape.param_grad(*p));
  StepMetrics out;
  out.grad_norm = nn::clip_grad_norm(grads, config.clip_norm);
  optimizer.step(params, grads);

  out.loss = value;
  out.kl = terms.kl.value()(0, 0);
  out.score_nll = terms.score_nll.value()(0, 0);
  out.adherence_nll = terms.adherence_nll.value()(0, 0);
  update_lagrange(lagrange, config.lagrange, out.score_nll, out.adherence_nll);
  out.lambda_score = lagrange.lambda_score;
  out.lambda_adherence = lagrange.lambda_adherence;
  return out;
}

FitResult fit(const Cohort& cohort, const std::vector<std::string>& train_ids,
              const std::vector<std::string>& validation_ids, const SlvmConfig& model_config,
              const TrainConfig& config) {
  if (train_ids.empty()) throw ValidationError("slvm fit: no training records");
  const std::set<std::string> train_set(train_ids.begin(), train_ids.end());

  SlvmModel model(model_config);
  model.stats = fit_normalization(cohort, train_set);
  model.schema = cohort.schema;

  std::vector<PatientRecord> train;
  for (const auto& id : train_ids) train.push_back(normalize(cohort.by_id(id), model.stats));
  std::vector<PatientRecord> val;
  for (const auto& id : validation_ids) val.push_back(normalize(cohort.by_id(id), model.stats));
  const SequenceBatch full = make_batch(pointers(train));
  const SequenceBatch val_batch = val.empty() ? SequenceBatch{} : make_batch(pointers(val));

  Rng rng(config.seed);
  model.init(rng);

  LagrangeState lagrange;
  lagrange.lambda_score = config.lagrange.init;
  lagrange.lambda_adherence = config.lagrange.init;
  const auto [xs, xa] = calibrate_targets(full, config.lagrange.xi_factor);
  lagrange.xi_score = config.lagrange.xi_score.value_or(xs);
  lagrange.xi_adherence = config.lagrange.xi_adherence.value_or(xa);

  nn::Radam optimizer(config.optimizer);
  FitResult result;
  result.model = model;
  result.lagrange = lagrange;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (config.lr_drop_epoch > 0 && epoch == config.lr_drop_epoch + 1) {
      optimizer.set_lr(config.optimizer.lr * config.lr_drop_factor);
    }
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord record;
    record.epoch = epoch;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<const PatientRecord*> rows;
      for (size_t i = start; i < end; ++i) rows.push_back(&train[order[i]]);
      SequenceBatch batch = make_batch(rows);
      if (config.mixup && config.mixup_alpha > 0.0 && batch.size() > 1) {
        batch = mixup_batch(batch, config.mixup_alpha, rng);
      }
      try {
        record.last_step = train_step(model, lagrange, batch, optimizer, config, rng);
      } catch (const NumericError& e) {
        std::cerr << "warning: skipped step in epoch " << epoch << ": " << e.what() << "\n";
      }
    }

    if (val.empty()) {
      result.history.push_back(record);
      result.model = model;
      result.lagrange = lagrange;
      result.best_epoch = epoch;
      continue;
    }
    Rng val_rng(config.seed ^ 0x5deece66dULL);
    const ElboValues v = elbo_values(model, val_batch, val_rng);
    record.validation = v.score_nll + v.adherence_nll;
    result.history.push_back(record);
    if (record.validation < best) {
      best = record.validation;
      since_best = 0;
      result.model = model;
      result.lagrange = lagrange;
      result.best_epoch = epoch;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

std::string to_string(Provenance p) { return p == Provenance::Filtered ? "filtered" : "prior-rollout"; }

OneStepPrediction predict_one_step(const SlvmModel& m, const PatientRecord& record, int t, int samples, Rng& rng) {
  check_step(t, 1, kIntervals, "prediction step");
  if (samples <= 0) throw ValidationError("samples must be positive");
  const PatientRecord norm = normalize(record, m.stats);
  Tape tape(false);
  auto chain = filter_rows(tape, m, norm, t, samples, rng);
  const ForwardMode eval;
  OneStepPrediction out;
  out.adherence = summarize_adherence(adherence_prob(tape, m, chain.back(), eval), t, Provenance::Filtered);
  Var a = tape.constant(Matrix::Constant(samples, 1, norm.a[static_cast<size_t>(t - 1)]));
  LatentStep next = transition_prior(tape, m, chain.back(), a, eval, rng);
  out.next_score = summarize_scores(m, decode_scores(tape, m, next, eval), t + 1);
  return out;
}

void validate_plan(const ActionPlan& plan, const PatientRecord& record, int t) {
  check_step(t, 1, kIntervals, "rollout step");
  if (plan.mode == ActionPlan::Mode::Inferred) return;
  const size_t expected = static_cast<size_t>(kSteps - t);
  if (plan.fixed.size() != expected) {
    throw ValidationError(fmt::format("actions: expected {} entries (a_{}..a_{}), got {}", expected, t, kIntervals,
                                      plan.fixed.size()));
  }
  int prev = t > 1 ? record.a[static_cast<size_t>(t - 2)] : 1;
  for (size_t i = 0; i < plan.fixed.size(); ++i) {
    const int a = plan.fixed[i];
    if (a != 0 && a != 1) throw ValidationError(fmt::format("actions: a_{} must be 0 or 1", t + static_cast<int>(i)));
    if (a == 1 && prev == 0) {
      throw ValidationError(
          fmt::format("actions: a_{} = 1 after discontinuation breaks absorption", t + static_cast<int>(i)));
    }
    prev = a;
  }
}

PredictionTrajectory rollout(const SlvmModel& m, const PatientRecord& record, int t, const ActionPlan& plan,
                             int samples, Rng& rng) {
  validate_plan(plan, record, t);
  if (samples <= 0) throw ValidationError("samples must be positive");
  const PatientRecord norm = normalize(record, m.stats);
  Tape tape(false);
  const ForwardMode eval;
  auto chain = filter_rows(tape, m, norm, t, samples, rng);

  PredictionTrajectory out;
  out.start_step = t;
  out.samples = samples;
  out.actions = Matrix::Zero(samples, kSteps - t);
  Vector prev = Vector::Constant(samples, t > 1 ? norm.a[static_cast<size_t>(t - 2)] : 1.0);
  LatentStep current = chain.back();
  for (int u = t; u <= kIntervals; ++u) {
    Var p = adherence_prob(tape, m, current, eval);
    out.adherence.push_back(
        summarize_adherence(p, u, u == t ? Provenance::Filtered : Provenance::PriorRollout));
    Vector action(samples);
    for (Eigen::Index k = 0; k < samples; ++k) {
      if (plan.mode == ActionPlan::Mode::Fixed) {
        action(k) = plan.fixed[static_cast<size_t>(u - t)];
      } else {
        action(k) = (prev(k) > 0.5 && p.value()(k, 0) >= m.config().threshold) ? 1.0 : 0.0;
      }
    }
    out.actions.col(u - t) = action;
    prev = action;
    current = transition_prior(tape, m, current, tape.constant(action), eval, rng);
    out.scores.push_back(summarize_scores(m, decode_scores(tape, m, current, eval), u + 1));
  }
  return out;
}

InterventionResult simulate_interventions(const SlvmModel& m, const PatientRecord& record, int t,
                                          const std::vector<std::vector<int>>& scenarios, int samples,
                                          unsigned long long seed) {
  if (scenarios.empty()) throw ValidationError("simulate: no scenarios");
  for (const auto& s : scenarios) validate_plan(ActionPlan::fixed_suffix(s), record, t);
  InterventionResult out;
  for (const auto& s : scenarios) {
    Rng rng(seed);
    out.trajectories.push_back(rollout(m, record, t, ActionPlan::fixed_suffix(s), samples, rng));
  }
  const size_t n = scenarios.size();
  out.delta.assign(n, std::vector<double>(n, 0.0));
  out.delta_normalized.assign(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      const Matrix diff = out.trajectories[i].scores.back().samples - out.trajectories[j].scores.back().samples;
      out.delta[i][j] = diff.mean();
      const Matrix scaled = diff.array().rowwise() / m.stats.score_std.transpose().array();
      out.delta_normalized[i][j] = scaled.mean();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

json manifest_fields(const SlvmModel& m) {
  return {{"model_kind", "slvm"},
          {"model", m.config().to_json()},
          {"normalization", to_json(m.stats)},
          {"schema", to_json(m.schema)}};
}

SlvmModel model_from_manifest(const json& manifest) {
  if (manifest.value("model_kind", "") != "slvm") throw SchemaError("artifact is not an slvm model");
  SlvmModel m(SlvmConfig::from_json(manifest.at("model")));
  m.stats = stats_from_json(manifest.at("normalization"));
  m.schema = schema_from_json(manifest.at("schema"));
  return m;
}

}  // namespace adherence::slvm
