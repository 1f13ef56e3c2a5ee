#include "adherence/training.hpp"

#include "adherence/error.hpp"

namespace adherence {

using nlohmann::json;

json LagrangeConfig::to_json() const {
  json j{{"eta", eta}, {"ma_decay", ma_decay}, {"init", init},           {"min", min},
         {"max", max}, {"xi_factor", xi_factor}, {"adapt", adapt}};
  j["xi_score"] = xi_score ? json(*xi_score) : json(nullptr);
  j["xi_adherence"] = xi_adherence ? json(*xi_adherence) : json(nullptr);
  return j;
}

LagrangeConfig LagrangeConfig::from_json(const json& j) {
  LagrangeConfig c;
  c.eta = j.value("eta", c.eta);
  c.ma_decay = j.value("ma_decay", c.ma_decay);
  c.init = j.value("init", c.init);
  c.min = j.value("min", c.min);
  c.max = j.value("max", c.max);
  c.xi_factor = j.value("xi_factor", c.xi_factor);
  c.adapt = j.value("adapt", c.adapt);
  if (j.contains("xi_score") && !j["xi_score"].is_null()) c.xi_score = j["xi_score"].get<double>();
  if (j.contains("xi_adherence") && !j["xi_adherence"].is_null()) c.xi_adherence = j["xi_adherence"].get<double>();
  return c;
}

json TrainConfig::to_json() const {
  return {{"max_epochs", max_epochs},
          {"patience", patience},
          {"batch_size", batch_size},
          {"dropout", dropout},
          {"mixup_alpha", mixup_alpha},
          {"mixup", mixup},
          {"optimizer",
           {{"lr", optimizer.lr},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"eps", optimizer.eps},
            {"rectify_threshold", optimizer.rectify_threshold}}},
          {"lr_drop_epoch", lr_drop_epoch},
          {"lr_drop_factor", lr_drop_factor},
          {"clip_norm", clip_norm},
          {"lagrange", lagrange.to_json()},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout = j.value("dropout", c.dropout);
  c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
  c.mixup = j.value("mixup", c.mixup);
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.rectify_threshold = o.value("rectify_threshold", c.optimizer.rectify_threshold);
  }
  c.lr_drop_epoch = j.value("lr_drop_epoch", c.lr_drop_epoch);
  c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("lagrange")) c.lagrange = LagrangeConfig::from_json(j["lagrange"]);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size <= 0 || c.max_epochs < 0 || c.patience <= 0) {
    throw ValidationError("train config: batch_size and patience must be positive");
  }
  if (c.lr_drop_epoch < 0 || !(c.lr_drop_factor > 0.0 && c.lr_drop_factor <= 1.0)) {
    throw ValidationError("train config: lr_drop_epoch must be >= 0 and lr_drop_factor in (0, 1]");
  }
  return c;
}

}  // namespace adherence
