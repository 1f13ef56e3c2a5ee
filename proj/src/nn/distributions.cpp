#include "adherence/nn/distributions.hpp"

#include <algorithm>
#include <cmath>

#include "adherence/error.hpp"

namespace adherence::nn {

namespace {

void require_same_size(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) throw DimensionError(std::string(op) + ": dimension mismatch");
}

void require_positive(const Vector& std, const char* op) {
  if ((std.array() <= 0.0).any()) throw ValidationError(std::string(op) + ": std must be positive");
}

}  // namespace

GaussianDraw gaussian_sample(const Vector& mean, const Vector& std, Rng& rng) {
  require_same_size(mean, std, "gaussian_sample");
  require_positive(std, "gaussian_sample");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector noise(mean.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = normal(rng);
  return {mean + std.cwiseProduct(noise), noise};
}

double gaussian_kl_diag(const Vector& mean1, const Vector& std1, const Vector& mean2, const Vector& std2) {
  require_same_size(mean1, std1, "gaussian_kl_diag");
  require_same_size(mean1, mean2, "gaussian_kl_diag");
  require_same_size(mean1, std2, "gaussian_kl_diag");
  require_positive(std1, "gaussian_kl_diag");
  require_positive(std2, "gaussian_kl_diag");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mean1.size(); ++i) {
    const double diff = mean1[i] - mean2[i];
    kl += std::log(std2[i] / std1[i]) + (std1[i] * std1[i] + diff * diff) / (2.0 * std2[i] * std2[i]) - 0.5;
  }
  return kl;
}

double gaussian_nll(const Vector& x, const Vector& mean, const Vector& std) {
  require_same_size(x, mean, "gaussian_nll");
  require_same_size(x, std, "gaussian_nll");
  require_positive(std, "gaussian_nll");
  double nll = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mean[i]) / std[i];
    nll += kHalfLog2Pi + std::log(std[i]) + 0.5 * z * z;
  }
  return nll;
}

double bce(double p, double y) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

Var gaussian_kl_diag(Var mean1, Var std1, Var mean2, Var std2) {
  // log(s2) - log(s1) + (s1^2 + (m1 - m2)^2) / (2 s2^2) - 1/2
  Var var2 = square(std2);
  Var num = square(std1) + square(mean1 - mean2);
  Var ratio = num * reciprocal(var2);
  Var per_dim = add_scalar(log(std2) - log(std1) + scale(ratio, 0.5), -0.5);
  return row_sum(per_dim);
}

Var gaussian_nll(Var x, Var mean, Var std) {
  Var z = (x - mean) * reciprocal(std);
  Var per_dim = add_scalar(log(std) + scale(square(z), 0.5), kHalfLog2Pi);
  return row_sum(per_dim);
}

Var gaussian_nll(const Matrix& x, Var mean, Var std) {
  return gaussian_nll(mean.tape()->constant(x), mean, std);
}

Var bce(Var p, const Matrix& y) {
  if (p.rows() != y.rows() || p.cols() != y.cols()) throw DimensionError("bce: shape mismatch");
  Var q = clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  Var log_q = log(q);
  Var log_1mq = log(add_scalar(scale(q, -1.0), 1.0));
  Matrix one_minus_y = (1.0 - y.array()).matrix();
  Var loss = scale(mask_mul(log_q, y) + mask_mul(log_1mq, one_minus_y), -1.0);
  return row_sum(loss);
}

}  // namespace adherence::nn
