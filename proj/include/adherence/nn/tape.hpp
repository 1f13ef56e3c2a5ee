#pragma once

// Minimal reverse-mode automatic differentiation over Eigen matrices.
//
// Every value on the tape is a dense matrix laid out as (batch rows x feature
// columns). Operations append a node holding the forward value and a closure
// that scatters the upstream gradient into the parents. Nodes that do not
// depend on a parameter or a gradient-tracked input carry no closure.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace adherence::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// A named trainable block. Gradients live on the tape, not here, so a
/// frozen model can be shared read-only across threads.
struct Parameter {
  std::string name;
  Matrix value;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  /// With `track_params` false, parameters enter as constants (inference).
  explicit Tape(bool track_params = true) : track_params_(track_params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Matrix value);
  /// Input whose gradient is tracked and readable through grad().
  Var input(Matrix value);
  /// Parameter leaf, registered once per tape. Its gradient is read back
  /// with param_grad() after backward().
  Var param(const Parameter& param);

  /// Appends an op node. `parents` decide whether the node tracks gradients.
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var push(Matrix value, const std::vector<Var>& parents, Backward backward);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and runs the reverse sweep.
  void backward(Var out);

  [[nodiscard]] const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  [[nodiscard]] const Matrix& grad(Var v) const;
  /// Gradient of the last backward() output w.r.t. `param` (zeros if unused).
  [[nodiscard]] Matrix param_grad(const Parameter& param) const;
  [[nodiscard]] bool tracks_params() const { return track_params_; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id())].requires_grad; }
  [[nodiscard]] size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient slot of `v` (used by op closures).
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
  bool track_params_ = true;
};

// Elementwise and linear-algebra ops. Shapes follow Eigen conventions; any
// mismatch throws DimensionError.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (B x n) + row (1 x n) broadcast over rows.
Var add_row(Var a, Var row);
/// a (B x n) * col (B x 1) broadcast over columns.
Var mul_col(Var a, Var col);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// Elementwise product with a constant matrix (masks, dropout).
Var mask_mul(Var a, const Matrix& mask);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var reciprocal(Var a);
/// Elementwise clamp to [lo, hi]; zero gradient where clamped.
Var clamp(Var a, double lo, double hi);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Sum of all entries (1 x 1).
Var sum(Var a);
/// Per-row sum (B x 1).
Var row_sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace adherence::nn
