#pragma once

#include <random>
#include <string>
#include <vector>

#include "adherence/nn/tape.hpp"

namespace adherence::nn {

using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.2;
/// Added to every softplus std so it stays strictly positive in floating point.
inline constexpr double kMinStd = 1e-5;

/// How a forward pass treats stochastic regularizers.
struct ForwardMode {
  bool training = false;
  double dropout_p = 0.0;
  Rng* rng = nullptr;  // required when training && dropout_p > 0
};

/// Affine map `x W + b`, W is (in x out), b is (1 x out).
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out);

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
  void init(Rng& rng);
  [[nodiscard]] Eigen::Index in_dim() const { return weight.value.rows(); }
  [[nodiscard]] Eigen::Index out_dim() const { return weight.value.cols(); }
  Var forward(Tape& tape, Var x) const;
};

/// Hidden layers with leaky-relu activations and inverted dropout.
class DenseStack {
 public:
  DenseStack() = default;
  DenseStack(const std::string& name, Eigen::Index in_dim, const std::vector<Eigen::Index>& hidden);

  void init(Rng& rng);
  /// Output is the activation of the last hidden layer (or the input when
  /// there are no hidden layers).
  Var forward(Tape& tape, Var x, const ForwardMode& mode) const;

  [[nodiscard]] Eigen::Index in_dim() const { return in_dim_; }
  [[nodiscard]] Eigen::Index out_dim() const;
  [[nodiscard]] const std::vector<Linear>& layers() const { return layers_; }
  std::vector<Linear>& layers() { return layers_; }

 private:
  Eigen::Index in_dim_ = 0;
  std::vector<Linear> layers_;
};

/// Linear mean and softplus std over a shared feature vector.
struct GaussianHead {
  Linear mean;
  Linear std;

  GaussianHead() = default;
  GaussianHead(const std::string& name, Eigen::Index in, Eigen::Index out);
  void init(Rng& rng);
  [[nodiscard]] Eigen::Index out_dim() const { return mean.out_dim(); }
};

struct GaussianVars {
  Var mean;
  Var std;
};

GaussianVars gaussian_head_forward(Tape& tape, const GaussianHead& head, Var features);

/// A DenseStack followed by a Gaussian head: one conditional distribution.
struct GaussianNet {
  DenseStack body;
  GaussianHead head;

  GaussianNet() = default;
  GaussianNet(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden,
              Eigen::Index out);
  void init(Rng& rng);
  GaussianVars forward(Tape& tape, Var x, const ForwardMode& mode) const;
};

/// A DenseStack followed by a sigmoid unit: Bernoulli probability.
struct BernoulliNet {
  DenseStack body;
  Linear logit;

  BernoulliNet() = default;
  BernoulliNet(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden);
  void init(Rng& rng);
  Var forward(Tape& tape, Var x, const ForwardMode& mode) const;
};

struct LstmLayer {
  // Gate order along the 4*hidden axis: input, forget, candidate, output.
  Parameter w_input;   // in x 4h
  Parameter w_hidden;  // h x 4h
  Parameter bias;      // 1 x 4h
};

struct LstmState {
  std::vector<Var> h;
  std::vector<Var> c;
};

class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(const std::string& name, Eigen::Index in_dim, Eigen::Index hidden, int layers);

  void init(Rng& rng);
  [[nodiscard]] LstmState zero_state(Tape& tape, Eigen::Index batch) const;
  /// One time step through every layer. Dropout (training only) is applied
  /// to the output of each layer below the top.
  Var step(Tape& tape, Var x, LstmState& state, const ForwardMode& mode) const;

  [[nodiscard]] Eigen::Index in_dim() const { return in_dim_; }
  [[nodiscard]] Eigen::Index hidden() const { return hidden_; }
  [[nodiscard]] int num_layers() const { return static_cast<int>(layers_.size()); }
  [[nodiscard]] const std::vector<LstmLayer>& layers() const { return layers_; }
  std::vector<LstmLayer>& layers() { return layers_; }

 private:
  Eigen::Index in_dim_ = 0;
  Eigen::Index hidden_ = 0;
  std::vector<LstmLayer> layers_;
};

/// Inverted dropout: kept units are scaled by 1/(1-p).
Var dropout(Var x, const ForwardMode& mode);

double leaky_relu(double x, double slope = kLeakySlope);

/// Value-level convenience wrapper over DenseStack::forward.
Matrix dense_forward(const DenseStack& stack, const Matrix& input, bool training, double dropout_p, Rng& rng);

/// Value-level LSTM step over plain matrices. `h` and `c` hold one matrix per
/// layer and are updated in place; returns the top-layer hidden state.
Matrix lstm_step(const LstmStack& stack, const Matrix& input, std::vector<Matrix>& h, std::vector<Matrix>& c);

// Parameter enumeration in a stable order (serialization, optimizer slots).
void collect(std::vector<Parameter*>& out, Linear& l);
void collect(std::vector<Parameter*>& out, DenseStack& s);
void collect(std::vector<Parameter*>& out, GaussianHead& h);
void collect(std::vector<Parameter*>& out, GaussianNet& n);
void collect(std::vector<Parameter*>& out, BernoulliNet& n);
void collect(std::vector<Parameter*>& out, LstmStack& s);

}  // namespace adherence::nn
