#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace kits {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Most kernels view a tensor as a matrix: `cols()` is the last dimension and
/// `rows()` the product of the leading ones, so a (t, N, D) feature map is a
/// (t*N) x D matrix.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  /// Same data, new shape; element count must match.
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t element_count(const Shape& shape);

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

/// Define-by-run record of executed ops. Nodes are appended in execution
/// order, so inputs always precede the ops that consume them and a single
/// reverse sweep is a valid backward traversal.
///
/// A tape is not thread-safe; use one tape per thread.
class Tape {
 public:
  /// Propagates `out_grad` (the gradient of the node's output) into inputs
  /// through `Tape::accumulate`.
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. The node requires grad iff any input does; when none
  /// does, `fn` is dropped.
  Var record(Tensor value, std::span<const Var> inputs, Backward fn);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient buffer of `v`; a zero tensor if nothing flowed into it.
  const Tensor& grad(Var v) { return grad_buffer(v); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Adds `g` into the gradient of `v` (no-op when `v` does not require grad).
  void accumulate(Var v, const Tensor& g);
  /// Mutable gradient buffer, zero-initialised on first access.
  Tensor& grad_buffer(Var v);

  /// Reverse sweep from a scalar root. Leaf gradients accumulate across calls;
  /// intermediate gradients are recomputed each call.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

  /// Smallest distance to a non-differentiable point seen by relu/abs inputs
  /// and argmax decisions during the forward pass. Used to screen gradient
  /// checks away from kinks and ties.
  double kink_margin() const { return kink_margin_; }
  void note_margin(double margin);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = true;
    Backward backward;
  };

  std::vector<Node> nodes_;
  double kink_margin_ = 1e300;
};

// Ops. Every op checks shapes and records an adjoint on the inputs' tape.

/// (m x k) * (k x n) on the matrix views of both operands.
Var matmul(Var a, Var b);

enum class BinaryOp { add, sub, mul };
enum class UnaryOp { relu, abs };

/// `b` must match `a`, or be a (1 x cols) row broadcast across rows, or a
/// (rows x 1) column broadcast across columns. The result has `a`'s shape.
Var elementwise(BinaryOp op, Var a, Var b);
Var elementwise(UnaryOp op, Var a);

inline Var add(Var a, Var b) { return elementwise(BinaryOp::add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(BinaryOp::sub, a, b); }
inline Var mul(Var a, Var b) { return elementwise(BinaryOp::mul, a, b); }
inline Var relu(Var a) { return elementwise(UnaryOp::relu, a); }
inline Var abs(Var a) { return elementwise(UnaryOp::abs, a); }

Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var concat_last(std::span<const Var> parts);
inline Var concat_last(std::initializer_list<Var> parts) {
  return concat_last(std::span<const Var>(parts.begin(), parts.size()));
}
/// Columns [begin, end) of the last dimension.
Var slice_last(Var a, std::size_t begin, std::size_t end);

/// Rows of the matrix view; repeated indices accumulate in backward.
Var gather_rows(Var a, std::span<const std::size_t> idx);

Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);

/// Copies the value into a new leaf that does not require grad.
Var detach(Var a);

/// Per-row cosine similarity of two equally shaped matrices, (rows x 1).
/// Rows where either operand has zero norm give 0 with zero gradient.
Var rowwise_cosine(Var a, Var b);

/// Scalar function of several tensors, built on the supplied tape.
using TapeFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over coordinates of all inputs of
/// |analytic - central difference| / max(1e-8, |central difference|).
/// Throws EvaluationError if f is non-finite at a perturbed point.
double grad_check(const TapeFunction& f, const std::vector<Tensor>& inputs, double h = 1e-5);

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-5);

}  // namespace kits
