#pragma once

#include "adherence/nn/layers.hpp"
#include "adherence/nn/tape.hpp"

namespace adherence::nn {

inline constexpr double kBceEpsilon = 1e-7;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct GaussianDraw {
  Vector sample;
  Vector noise;
};

/// Reparameterized draw `mean + std * eps`. The noise is returned so callers
/// can replay it (common random numbers).
GaussianDraw gaussian_sample(const Vector& mean, const Vector& std, Rng& rng);

/// KL(N(mean1, std1^2) || N(mean2, std2^2)) summed over independent dims.
double gaussian_kl_diag(const Vector& mean1, const Vector& std1, const Vector& mean2, const Vector& std2);

/// Negative log density of a diagonal Gaussian, summed over dims.
double gaussian_nll(const Vector& x, const Vector& mean, const Vector& std);

/// Binary cross-entropy with `p` clamped to [eps, 1-eps]; soft labels allowed.
double bce(double p, double y);

// Tape versions. Inputs are (B x d); results are per-row (B x 1).
Var gaussian_kl_diag(Var mean1, Var std1, Var mean2, Var std2);
Var gaussian_nll(Var x, Var mean, Var std);
/// `x` is a constant target here.
Var gaussian_nll(const Matrix& x, Var mean, Var std);
Var bce(Var p, const Matrix& y);

}  // namespace adherence::nn
