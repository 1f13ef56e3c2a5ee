#include "adherence/nn/optim.hpp"

#include <algorithm>
#include <cmath>

#include "adherence/error.hpp"

namespace adherence::nn {

void Radam::step(std::span<Parameter* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw DimensionError("radam: parameter/gradient count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    if (g.rows() != params[i]->value.rows() || g.cols() != params[i]->value.cols()) {
      throw DimensionError("radam: gradient shape mismatch for " + params[i]->name);
    }
    if (!g.allFinite()) throw NumericError("radam: non-finite gradient in " + params[i]->name);
  }
  if (m_.empty()) {
    for (Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  } else if (m_.size() != params.size()) {
    throw DimensionError("radam: parameter list changed between steps");
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, t);
  const double b2t = std::pow(b2, t);
  const double bias2 = 1.0 - b2t;
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / bias2;
  const bool adaptive = rho_t > config_.rectify_threshold;
  double rect = 0.0;
  if (adaptive) {
    rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }

  for (size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseAbs2();
    Matrix m_hat = m_[i] / bias1;
    if (adaptive) {
      Matrix denom = (v_[i] / bias2).cwiseSqrt().array() + config_.eps;
      params[i]->value -= (config_.lr * rect) * m_hat.cwiseQuotient(denom);
    } else {
      params[i]->value -= config_.lr * m_hat;
    }
  }
}

double global_norm(std::span<const Matrix> grads) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Matrix> grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Matrix& g : grads) g *= factor;
  }
  return norm;
}

GradCheckReport grad_check(const LossFn& loss, std::span<Parameter* const> params, double tolerance,
                           double step) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    Var out = loss(tape);
    tape.backward(out);
    for (Parameter* p : params) analytic.push_back(tape.param_grad(*p));
  }
  auto evaluate = [&loss]() {
    Tape tape(false);
    return loss(tape).value()(0, 0);
  };

  GradCheckReport report;
  for (size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + step;
      const double up = evaluate();
      p.value.data()[i] = saved - step;
      const double down = evaluate();
      p.value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_parameter = p.name + "[" + std::to_string(i) + "]";
      }
      if (rel > tolerance) report.offending.push_back(p.name + "[" + std::to_string(i) + "]");
    }
  }
  report.passed = report.offending.empty();
  return report;
}

}  // namespace adherence::nn
