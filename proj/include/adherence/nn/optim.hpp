#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adherence/nn/tape.hpp"

namespace adherence::nn {

struct RadamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Adaptive step is used once the SMA length exceeds this (PyTorch uses 5).
  double rectify_threshold = 5.0;
};

/// Rectified Adam. Moments are allocated lazily on the first step and keyed
/// by position in the parameter list, which must stay stable.
class Radam {
 public:
  explicit Radam(RadamConfig config = {}) : config_(config) {}

  /// Throws NumericError naming the parameter if any gradient is non-finite;
  /// parameters are left untouched in that case.
  void step(std::span<Parameter* const> params, std::span<const Matrix> grads);

  [[nodiscard]] long step_count() const { return step_; }
  [[nodiscard]] const RadamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  [[nodiscard]] const std::vector<Matrix>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  RadamConfig config_;
  long step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

/// Scales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(std::span<Matrix> grads, double max_norm = 0.8);

double global_norm(std::span<const Matrix> grads);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::vector<std::string> offending;  // "name[i]" entries above tolerance
  bool passed = true;
};

/// Builds the scalar loss on the tape. Must be deterministic (freeze noise).
using LossFn = std::function<Var(Tape&)>;

/// Central finite differences against reverse-mode gradients. The relative
/// error of one entry is |a - n| / max(|a|, |n|, 1e-4).
GradCheckReport grad_check(const LossFn& loss, std::span<Parameter* const> params, double tolerance,
                           double step = 1e-5);

}  // namespace adherence::nn
