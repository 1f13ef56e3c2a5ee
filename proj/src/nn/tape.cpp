#include "adherence/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adherence/error.hpp"

namespace adherence::nn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

// Elementwise unary op; `deriv` is evaluated at the input.
template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& t = *a.tape();
  Matrix out = a.value().unaryExpr(fwd);
  return t.push(std::move(out), {a}, [a, deriv](Tape& tape, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) d.data()[i] = deriv(x.data()[i]);
    tape.accumulate(a, g.cwiseProduct(d));
  });
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Parameter& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return {this, it->second};
  nodes_.push_back(Node{param.value, {}, track_params_, {}});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&param, id);
  return {this, id};
}

Matrix Tape::param_grad(const Parameter& param) const {
  auto it = param_ids_.find(&param);
  if (it == param_ids_.end()) return Matrix::Zero(param.value.rows(), param.value.cols());
  const Node& n = nodes_[static_cast<size_t>(it->second)];
  if (n.grad.size() == 0) return Matrix::Zero(param.value.rows(), param.value.cols());
  return n.grad;
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool track = false;
  for (const Var& p : parents) track = track || nodes_[static_cast<size_t>(p.id())].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, track, track ? std::move(backward) : Backward{}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool track = false;
  for (const Var& p : parents) track = track || nodes_[static_cast<size_t>(p.id())].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, track, track ? std::move(backward) : Backward{}});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[static_cast<size_t>(v.id())];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

const Matrix& Tape::grad(Var v) const {
  static const Matrix empty;
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  return n.grad.size() == 0 ? empty : n.grad;
}

void Tape::backward(Var out) {
  Node& root = nodes_[static_cast<size_t>(out.id())];
  if (root.value.size() != 1) throw DimensionError("backward: output must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);
  for (int i = out.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      Matrix g = n.grad;
      n.backward(*this, g);
    }
  }
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()));
  }
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.requires_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  return t.push(a.value() + b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  return t.push(a.value() - b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    if (tape.requires_grad(b)) tape.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tape& t = *a.tape();
  return t.push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) tape.accumulate(a, g.cwiseProduct(b.value()));
    if (tape.requires_grad(b)) tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: row must be 1 x cols");
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    if (tape.requires_grad(row)) tape.accumulate(row, g.colwise().sum());
  });
}

Var mul_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw DimensionError("mul_col: col must be rows x 1");
  Tape& t = *a.tape();
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.push(std::move(out), {a, col}, [a, col](Tape& tape, const Matrix& g) {
    if (tape.requires_grad(a)) {
      Matrix ga = g.array().colwise() * col.value().col(0).array();
      tape.accumulate(a, ga);
    }
    if (tape.requires_grad(col)) tape.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape();
  return t.push(a.value() * c, {a}, [a, c](Tape& tape, const Matrix& g) { tape.accumulate(a, g * c); });
}

Var add_scalar(Var a, double c) {
  Tape& t = *a.tape();
  Matrix out = a.value().array() + c;
  return t.push(std::move(out), {a}, [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); });
}

Var mask_mul(Var a, const Matrix& mask) {
  require_same_shape(a.value(), mask, "mask_mul");
  Tape& t = *a.tape();
  return t.push(a.value().cwiseProduct(mask), {a},
                [a, mask](Tape& tape, const Matrix& g) { tape.accumulate(a, g.cwiseProduct(mask)); });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x) { return x >= 0.0 ? 1.0 : slope; });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }, sigmoid_scalar);
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var reciprocal(Var a) {
  return unary(
      a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Tape& t = *parts.front().tape();
  return t.push(std::move(out), parts, [parts](Tape& tape, const Matrix& g) {
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
      if (tape.requires_grad(p)) tape.accumulate(p, g.middleCols(offset, p.cols()));
      offset += p.cols();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Tape& t = *a.tape();
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), {a}, [a, start, count](Tape& tape, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    tape.accumulate(a, full);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), {a}, [a](Tape& tape, const Matrix& g) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var row_sum(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value().rowwise().sum();
  return t.push(std::move(out), {a}, [a](Tape& tape, const Matrix& g) {
    Matrix full = g.col(0).replicate(1, a.cols());
    tape.accumulate(a, full);
  });
}

}  // namespace adherence::nn
