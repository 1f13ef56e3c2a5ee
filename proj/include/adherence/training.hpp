#pragma once

// Training settings shared by both model kinds.

#include <optional>

#include <json.hpp>

#include "adherence/nn/optim.hpp"

namespace adherence {

/// Multiplier adaptation for the constrained objective (SLVM only).
struct LagrangeConfig {
  double eta = 0.01;
  double ma_decay = 0.99;
  double init = 1.0;
  double min = 1e-4;
  double max = 1e4;
  double xi_factor = 0.9;
  bool adapt = true;
  std::optional<double> xi_score;      // overrides the calibrated target
  std::optional<double> xi_adherence;  // overrides the calibrated target

  [[nodiscard]] nlohmann::json to_json() const;
  static LagrangeConfig from_json(const nlohmann::json& j);
};

/// Optimizer, batching and regularization.
struct TrainConfig {
  int max_epochs = 500;
  int patience = 50;
  int batch_size = 64;
  double dropout = 0.05;
  double mixup_alpha = 0.2;
  bool mixup = true;
  nn::RadamConfig optimizer;
  /// After this many epochs the learning rate is scaled by lr_drop_factor; 0 keeps it fixed.
  int lr_drop_epoch = 0;
  double lr_drop_factor = 0.1;
  double clip_norm = 0.8;
  LagrangeConfig lagrange;
  unsigned long long seed = 0;

  [[nodiscard]] nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

}  // namespace adherence
