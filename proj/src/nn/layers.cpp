#include "adherence/nn/layers.hpp"

#include <cmath>

#include "adherence/error.hpp"

namespace adherence::nn {

namespace {

void uniform_fill(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

}  // namespace

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
    : weight{name + ".weight", Matrix::Zero(in, out)}, bias{name + ".bias", Matrix::Zero(1, out)} {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(in_dim(), 1)));
  uniform_fill(weight.value, bound, rng);
  uniform_fill(bias.value, bound, rng);
}

Var Linear::forward(Tape& tape, Var x) const {
  if (x.cols() != in_dim()) {
    throw DimensionError(weight.name + ": expected input dim " + std::to_string(in_dim()) + ", got " +
                         std::to_string(x.cols()));
  }
  return add_row(matmul(x, tape.param(weight)), tape.param(bias));
}

DenseStack::DenseStack(const std::string& name, Eigen::Index in_dim, const std::vector<Eigen::Index>& hidden)
    : in_dim_(in_dim) {
  Eigen::Index prev = in_dim;
  for (size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(name + ".l" + std::to_string(i), prev, hidden[i]);
    prev = hidden[i];
  }
}

void DenseStack::init(Rng& rng) {
  for (Linear& l : layers_) l.init(rng);
}

Eigen::Index DenseStack::out_dim() const { return layers_.empty() ? in_dim_ : layers_.back().out_dim(); }

Var DenseStack::forward(Tape& tape, Var x, const ForwardMode& mode) const {
  if (x.cols() != in_dim_) {
    throw DimensionError("dense stack: expected input dim " + std::to_string(in_dim_) + ", got " +
                         std::to_string(x.cols()));
  }
  Var h = x;
  for (const Linear& l : layers_) {
    h = leaky_relu(l.forward(tape, h), kLeakySlope);
    h = dropout(h, mode);
  }
  return h;
}

Var dropout(Var x, const ForwardMode& mode) {
  if (!mode.training || mode.dropout_p <= 0.0) return x;
  if (mode.rng == nullptr) throw Error("dropout: training mode requires an rng");
  std::bernoulli_distribution keep(1.0 - mode.dropout_p);
  const double inv = 1.0 / (1.0 - mode.dropout_p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*mode.rng) ? inv : 0.0;
  return mask_mul(x, mask);
}

GaussianHead::GaussianHead(const std::string& name, Eigen::Index in, Eigen::Index out)
    : mean(name + ".mean", in, out), std(name + ".std", in, out) {}

void GaussianHead::init(Rng& rng) {
  mean.init(rng);
  std.init(rng);
}

GaussianVars gaussian_head_forward(Tape& tape, const GaussianHead& head, Var features) {
  Var mu = head.mean.forward(tape, features);
  Var sigma = add_scalar(softplus(head.std.forward(tape, features)), kMinStd);
  return {mu, sigma};
}

GaussianNet::GaussianNet(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                         Eigen::Index out)
    : body(name, in, hidden), head(name + ".head", hidden.empty() ? in : hidden.back(), out) {}

void GaussianNet::init(Rng& rng) {
  body.init(rng);
  head.init(rng);
}

GaussianVars GaussianNet::forward(Tape& tape, Var x, const ForwardMode& mode) const {
  return gaussian_head_forward(tape, head, body.forward(tape, x, mode));
}

BernoulliNet::BernoulliNet(const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden)
    : body(name, in, hidden), logit(name + ".logit", hidden.empty() ? in : hidden.back(), 1) {}

void BernoulliNet::init(Rng& rng) {
  body.init(rng);
  logit.init(rng);
}

Var BernoulliNet::forward(Tape& tape, Var x, const ForwardMode& mode) const {
  return sigmoid(logit.forward(tape, body.forward(tape, x, mode)));
}

LstmStack::LstmStack(const std::string& name, Eigen::Index in_dim, Eigen::Index hidden, int layers)
    : in_dim_(in_dim), hidden_(hidden) {
  for (int l = 0; l < layers; ++l) {
    const std::string p = name + ".l" + std::to_string(l);
    const Eigen::Index in = l == 0 ? in_dim : hidden;
    layers_.push_back(LstmLayer{{p + ".w_input", Matrix::Zero(in, 4 * hidden)},
                                {p + ".w_hidden", Matrix::Zero(hidden, 4 * hidden)},
                                {p + ".bias", Matrix::Zero(1, 4 * hidden)}});
  }
}

void LstmStack::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (LstmLayer& l : layers_) {
    uniform_fill(l.w_input.value, bound, rng);
    uniform_fill(l.w_hidden.value, bound, rng);
    uniform_fill(l.bias.value, bound, rng);
  }
}

LstmState LstmStack::zero_state(Tape& tape, Eigen::Index batch) const {
  LstmState s;
  for (size_t l = 0; l < layers_.size(); ++l) {
    s.h.push_back(tape.constant(Matrix::Zero(batch, hidden_)));
    s.c.push_back(tape.constant(Matrix::Zero(batch, hidden_)));
  }
  return s;
}

Var LstmStack::step(Tape& tape, Var x, LstmState& state, const ForwardMode& mode) const {
  if (x.cols() != in_dim_) {
    throw DimensionError("lstm: expected input dim " + std::to_string(in_dim_) + ", got " +
                         std::to_string(x.cols()));
  }
  if (state.h.size() != layers_.size() || state.c.size() != layers_.size()) {
    throw DimensionError("lstm: state has wrong layer count");
  }
  const Eigen::Index h = hidden_;
  Var input = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const LstmLayer& layer = layers_[l];
    if (state.h[l].cols() != h || state.c[l].cols() != h || state.h[l].rows() != x.rows()) {
      throw DimensionError("lstm: state shape mismatch");
    }
    Var pre = add_row(matmul(input, tape.param(layer.w_input)) + matmul(state.h[l], tape.param(layer.w_hidden)),
                      tape.param(layer.bias));
    Var i_gate = sigmoid(slice_cols(pre, 0, h));
    Var f_gate = sigmoid(slice_cols(pre, h, h));
    Var g_cand = tanh(slice_cols(pre, 2 * h, h));
    Var o_gate = sigmoid(slice_cols(pre, 3 * h, h));
    Var c_next = f_gate * state.c[l] + i_gate * g_cand;
    Var h_next = o_gate * tanh(c_next);
    state.c[l] = c_next;
    state.h[l] = h_next;
    input = l + 1 < layers_.size() ? dropout(h_next, mode) : h_next;
  }
  return input;
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

Matrix dense_forward(const DenseStack& stack, const Matrix& input, bool training, double dropout_p, Rng& rng) {
  Tape tape(false);
  Var out = stack.forward(tape, tape.constant(input), ForwardMode{training, dropout_p, &rng});
  return out.value();
}

Matrix lstm_step(const LstmStack& stack, const Matrix& input, std::vector<Matrix>& h, std::vector<Matrix>& c) {
  if (h.size() != static_cast<size_t>(stack.num_layers()) || c.size() != h.size()) {
    throw DimensionError("lstm_step: state has wrong layer count");
  }
  Tape tape(false);
  LstmState state;
  for (size_t l = 0; l < h.size(); ++l) {
    state.h.push_back(tape.constant(h[l]));
    state.c.push_back(tape.constant(c[l]));
  }
  Var out = stack.step(tape, tape.constant(input), state, ForwardMode{});
  for (size_t l = 0; l < h.size(); ++l) {
    h[l] = state.h[l].value();
    c[l] = state.c[l].value();
  }
  return out.value();
}

void collect(std::vector<Parameter*>& out, Linear& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

void collect(std::vector<Parameter*>& out, DenseStack& s) {
  for (Linear& l : s.layers()) collect(out, l);
}

void collect(std::vector<Parameter*>& out, GaussianHead& h) {
  collect(out, h.mean);
  collect(out, h.std);
}

void collect(std::vector<Parameter*>& out, GaussianNet& n) {
  collect(out, n.body);
  collect(out, n.head);
}

void collect(std::vector<Parameter*>& out, BernoulliNet& n) {
  collect(out, n.body);
  collect(out, n.logit);
}

void collect(std::vector<Parameter*>& out, LstmStack& s) {
  for (LstmLayer& l : s.layers()) {
    out.push_back(&l.w_input);
    out.push_back(&l.w_hidden);
    out.push_back(&l.bias);
  }
}

}  // namespace adherence::nn
