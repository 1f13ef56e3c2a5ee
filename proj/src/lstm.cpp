#include "adherence/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "adherence/artifact.hpp"
#include "adherence/error.hpp"
#include "adherence/nn/distributions.hpp"

namespace adherence::lstm {

using nlohmann::json;
using nn::ForwardMode;
using nn::Rng;

namespace {

Var mean_rows(Var v) { return scale(sum(v), 1.0 / static_cast<double>(v.rows())); }

Var step(Tape& tape, const LstmModel& m, Var x, Var y_prev, Var s, nn::LstmState& state, const ForwardMode& mode) {
  return m.stack.step(tape, nn::concat_cols({x, y_prev, s}), state, mode);
}

std::vector<const PatientRecord*> pointers(const std::vector<PatientRecord>& records) {
  std::vector<const PatientRecord*> out;
  for (const auto& r : records) out.push_back(&r);
  return out;
}

void check_history(const LstmModel& m, const Matrix& x_hist, const std::vector<int>& y_hist, const Vector& s) {
  const auto t = static_cast<int>(x_hist.rows());
  if (t < 1 || t > kIntervals) throw ValidationError(fmt::format("history length must be in [1, 5], got {}", t));
  if (static_cast<int>(y_hist.size()) != t - 1) {
    throw ValidationError(fmt::format("history mismatch: {} visits need {} labels, got {}", t, t - 1, y_hist.size()));
  }
  if (x_hist.cols() != m.config().score_dim || s.size() != m.config().static_dim) {
    throw DimensionError("lstm: history dimensions do not match the model");
  }
}

}  // namespace

json LstmConfig::to_json() const {
  return {{"static_dim", static_dim}, {"score_dim", score_dim}, {"hidden", hidden},
          {"layers", layers},         {"threshold", threshold}};
}

LstmConfig LstmConfig::from_json(const json& j) {
  LstmConfig c;
  c.static_dim = j.value("static_dim", c.static_dim);
  c.score_dim = j.value("score_dim", c.score_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.threshold = j.value("threshold", c.threshold);
  return c;
}

LstmModel::LstmModel(LstmConfig config) : config_(config) {
  if (config_.hidden <= 0 || config_.layers <= 0) throw DimensionError("lstm: hidden size and layers must be positive");
  stack = nn::LstmStack("lstm.stack", config_.input_dim(), config_.hidden, config_.layers);
  score_head = nn::Linear("lstm.score_head", config_.hidden, config_.score_dim);
  adherence_head = nn::Linear("lstm.adherence_head", config_.hidden, 1);
  schema = CohortSchema::generic(config_.static_dim, config_.score_dim);
  stats.static_mean = Vector::Zero(config_.static_dim);
  stats.static_std = Vector::Ones(config_.static_dim);
  stats.score_mean = Vector::Zero(config_.score_dim);
  stats.score_std = Vector::Ones(config_.score_dim);
  target_variance = Vector::Ones(config_.score_dim);
}

void LstmModel::init(Rng& rng) {
  stack.init(rng);
  score_head.init(rng);
  adherence_head.init(rng);
}

std::vector<Parameter*> LstmModel::parameters() {
  std::vector<Parameter*> out;
  nn::collect(out, stack);
  nn::collect(out, score_head);
  nn::collect(out, adherence_head);
  return out;
}

std::vector<const Parameter*> LstmModel::parameters() const {
  auto mut = const_cast<LstmModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

double nmse(const Matrix& pred, const Matrix& target, const Vector& variance) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || variance.size() != pred.cols()) {
    throw DimensionError("nmse: shape mismatch");
  }
  if (pred.size() == 0) throw ValidationError("nmse: empty input");
  const Matrix sq = (pred - target).cwiseAbs2();
  return (sq.array().rowwise() / variance.transpose().array()).mean();
}

Vector column_variance(const Matrix& targets) {
  if (targets.rows() == 0) throw ValidationError("column_variance: no rows");
  const Eigen::RowVectorXd mean = targets.colwise().mean();
  return (targets.rowwise() - mean).cwiseAbs2().colwise().mean().transpose();
}

Vector target_variance(const SequenceBatch& batch) {
  std::vector<Eigen::RowVectorXd> rows;
  for (int t = 1; t < kSteps; ++t) {
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      if (batch.mask(i, t) > 0.5) rows.push_back(batch.x[static_cast<size_t>(t)].row(i));
    }
  }
  if (rows.empty()) throw ValidationError("target_variance: no observed targets");
  Matrix stacked(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (size_t i = 0; i < rows.size(); ++i) stacked.row(static_cast<Eigen::Index>(i)) = rows[i];
  return column_variance(stacked).cwiseMax(kStdEpsilon);
}

StepOutputs unroll(Tape& tape, const LstmModel& m, const SequenceBatch& batch, const ForwardMode& mode) {
  if (batch.s.cols() != m.config().static_dim || batch.x[0].cols() != m.config().score_dim) {
    throw DimensionError("lstm: batch dimensions do not match the model");
  }
  const Eigen::Index rows = batch.size();
  nn::LstmState state = m.stack.zero_state(tape, rows);
  Var s = tape.constant(batch.s);
  StepOutputs out;
  for (int t = 0; t < kIntervals; ++t) {
    Var y_prev = tape.constant(t == 0 ? Matrix::Ones(rows, 1) : Matrix(batch.y.col(t - 1)));
    Var h = step(tape, m, tape.constant(batch.x[static_cast<size_t>(t)]), y_prev, s, state, mode);
    out.score.push_back(m.score_head.forward(tape, h));
    out.adherence.push_back(sigmoid(m.adherence_head.forward(tape, h)));
  }
  return out;
}

LossVars loss_terms(Tape& tape, const LstmModel& m, const SequenceBatch& batch, const ForwardMode& mode) {
  const Eigen::Index rows = batch.size();
  const Eigen::Index d = m.config().score_dim;
  StepOutputs out = unroll(tape, m, batch, mode);
  const Matrix weights =
      (m.target_variance.cwiseInverse() / static_cast<double>(d)).transpose().replicate(rows, 1);
  Var nmse_rows = tape.constant(Matrix::Zero(rows, 1));
  Var bce_rows = tape.constant(Matrix::Zero(rows, 1));
  for (int t = 0; t < kIntervals; ++t) {
    Var diff = out.score[static_cast<size_t>(t)] - tape.constant(batch.x[static_cast<size_t>(t + 1)]);
    Var per_row = row_sum(mask_mul(square(diff), weights));
    nmse_rows = nmse_rows + mask_mul(per_row, batch.mask.col(t + 1));
    bce_rows = bce_rows + nn::bce(out.adherence[static_cast<size_t>(t)], batch.y.col(t));
  }
  LossVars v;
  v.nmse = mean_rows(nmse_rows);
  v.bce = mean_rows(bce_rows);
  v.loss = v.nmse + v.bce;
  return v;
}

StepMetrics train_step(LstmModel& m, const SequenceBatch& batch, nn::Radam& optimizer, const TrainConfig& config,
                       Rng& rng) {
  Tape tape;
  LossVars v = loss_terms(tape, m, batch, ForwardMode{true, config.dropout, &rng});
  const double value = v.loss.value()(0, 0);
  if (!std::isfinite(value)) {
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
    throw NumericError("lstm: non-finite loss on batch [" + ids + "]");
  }
  tape.backward(v.loss);
  auto params = m.parameters();
  std::vector<Matrix> grads;
  for (Parameter* p : params) grads.push_back(tape.param_grad(*p));
  StepMetrics out;
  out.grad_norm = nn::clip_grad_norm(grads, config.clip_norm);
  optimizer.step(params, grads);
  out.loss = value;
  out.nmse = v.nmse.value()(0, 0);
  out.bce = v.bce.value()(0, 0);
  return out;
}

FitResult fit(const Cohort& cohort, const std::vector<std::string>& train_ids,
              const std::vector<std::string>& validation_ids, const LstmConfig& model_config,
              const TrainConfig& config) {
  if (train_ids.empty()) throw ValidationError("lstm fit: no training records");
  LstmModel model(model_config);
  model.stats = fit_normalization(cohort, {train_ids.begin(), train_ids.end()});
  model.schema = cohort.schema;

  std::vector<PatientRecord> train;
  for (const auto& id : train_ids) train.push_back(normalize(cohort.by_id(id), model.stats));
  std::vector<PatientRecord> val;
  for (const auto& id : validation_ids) val.push_back(normalize(cohort.by_id(id), model.stats));
  model.target_variance = target_variance(make_batch(pointers(train)));
  const SequenceBatch val_batch = val.empty() ? SequenceBatch{} : make_batch(pointers(val));

  Rng rng(config.seed);
  model.init(rng);
  nn::Radam optimizer(config.optimizer);

  FitResult result;
  result.model = model;
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
        record.last_step = train_step(model, batch, optimizer, config, rng);
      } catch (const NumericError& e) {
        std::cerr << "warning: skipped step in epoch " << epoch << ": " << e.what() << "\n";
      }
    }
    if (val.empty()) {
      result.history.push_back(record);
      result.model = model;
      result.best_epoch = epoch;
      continue;
    }
    Tape tape(false);
    LossVars v = loss_terms(tape, model, val_batch, ForwardMode{});
    record.validation = v.loss.value()(0, 0);
    result.history.push_back(record);
    if (record.validation < best) {
      best = record.validation;
      since_best = 0;
      result.model = model;
      result.best_epoch = epoch;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

namespace {

struct Unrolled {
  Vector score_norm;  // x_{t+1} prediction, normalized
  double adherence = 0.0;
};

Unrolled advance(Tape& tape, const LstmModel& m, const Matrix& x_row, double y_prev, Var s, nn::LstmState& state) {
  Var h = step(tape, m, tape.constant(x_row), tape.constant(Matrix::Constant(1, 1, y_prev)), s, state, ForwardMode{});
  return {m.score_head.forward(tape, h).value().row(0).transpose(),
          sigmoid(m.adherence_head.forward(tape, h)).value()(0, 0)};
}

Unrolled run_history(Tape& tape, const LstmModel& m, const Matrix& x_norm, const std::vector<int>& y_hist, Var s,
                     nn::LstmState& state) {
  Unrolled out;
  for (Eigen::Index t = 0; t < x_norm.rows(); ++t) {
    const double y_prev = t == 0 ? 1.0 : y_hist[static_cast<size_t>(t - 1)];
    out = advance(tape, m, x_norm.row(t), y_prev, s, state);
  }
  return out;
}

Matrix history_of(const LstmModel& m, const PatientRecord& record, int t) {
  const PatientRecord norm = normalize(record, m.stats);
  return m.stats.denormalize_score_rows(norm.x.topRows(t));
}

std::vector<int> labels_of(const PatientRecord& record, int t) {
  return {record.y.begin(), record.y.begin() + std::max(0, t - 1)};
}

}  // namespace

Prediction forward(const LstmModel& m, const Matrix& x_hist, const std::vector<int>& y_hist, const Vector& s) {
  check_history(m, x_hist, y_hist, s);
  Tape tape(false);
  nn::LstmState state = m.stack.zero_state(tape, 1);
  Var s_var = tape.constant(m.stats.normalize_static(s).transpose());
  const Unrolled u = run_history(tape, m, m.stats.normalize_score_rows(x_hist), y_hist, s_var, state);
  return {m.stats.denormalize_scores(u.score_norm), u.adherence};
}

Prediction forward(const LstmModel& m, const PatientRecord& record, int t) {
  if (t < 1 || t > kIntervals) throw ValidationError(fmt::format("prediction step must be in [1, 5], got {}", t));
  return forward(m, history_of(m, record, t), labels_of(record, t), record.s);
}

Trajectory rollout(const LstmModel& m, const Matrix& x_hist, const std::vector<int>& y_hist, const Vector& s) {
  check_history(m, x_hist, y_hist, s);
  const int t = static_cast<int>(x_hist.rows());
  Tape tape(false);
  nn::LstmState state = m.stack.zero_state(tape, 1);
  Var s_var = tape.constant(m.stats.normalize_static(s).transpose());
  Unrolled u = run_history(tape, m, m.stats.normalize_score_rows(x_hist), y_hist, s_var, state);

  Trajectory out;
  out.start_step = t;
  int prev = t > 1 ? y_hist.back() : 1;
  for (int v = t; v <= kIntervals; ++v) {
    out.scores.push_back(m.stats.denormalize_scores(u.score_norm));
    out.adherence.push_back(u.adherence);
    const int label = (prev == 1 && u.adherence >= m.config().threshold) ? 1 : 0;
    out.fed_back.push_back(label);
    prev = label;
    if (v < kIntervals) u = advance(tape, m, u.score_norm.transpose(), label, s_var, state);
  }
  return out;
}

Trajectory rollout(const LstmModel& m, const PatientRecord& record, int t) {
  if (t < 1 || t > kIntervals) throw ValidationError(fmt::format("rollout step must be in [1, 5], got {}", t));
  return rollout(m, history_of(m, record, t), labels_of(record, t), record.s);
}

json manifest_fields(const LstmModel& m) {
  return {{"model_kind", "lstm"},
          {"model", m.config().to_json()},
          {"normalization", to_json(m.stats)},
          {"schema", to_json(m.schema)},
          {"target_variance", to_json(m.target_variance)}};
}

LstmModel model_from_manifest(const json& manifest) {
  if (manifest.value("model_kind", "") != "lstm") throw SchemaError("artifact is not an lstm model");
  LstmModel m(LstmConfig::from_json(manifest.at("model")));
  m.stats = stats_from_json(manifest.at("normalization"));
  m.schema = schema_from_json(manifest.at("schema"));
  m.target_variance = vector_from_json(manifest.at("target_variance"));
  return m;
}

}  // namespace adherence::lstm
