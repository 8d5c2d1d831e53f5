#include "kits/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kits/error.hpp"

namespace kits {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.raw(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError("operands are recorded on different tapes");
  }
  return *a.tape;
}

Shape leading(const Shape& s) {
  return s.empty() ? Shape{} : Shape(s.begin(), s.end() - 1);
}

enum class Broadcast { none, row, column, scalar };

Broadcast broadcast_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.size() == 1) return Broadcast::scalar;
  if (b.cols() == a.cols() && b.rows() == 1) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::column;
  throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(b.shape()) +
                       " onto " + to_string(a.shape()));
}

std::size_t b_index(Broadcast mode, std::size_t r, std::size_t c, std::size_t cols) {
  switch (mode) {
    case Broadcast::none:
      return r * cols + c;
    case Broadcast::row:
      return c;
    case Broadcast::column:
      return r;
    case Broadcast::scalar:
      return 0;
  }
  return 0;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor of shape " + to_string(shape_) + " given " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(n_rows * n_cols);
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor({n_rows, n_cols}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward fn) {
  Node node;
  node.value = std::move(value);
  node.is_leaf = false;
  for (Var in : inputs) {
    if (in.tape != this) throw ContractError("op input recorded on a different tape");
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_.at(v.id).requires_grad) return;
  Tensor& buf = grad_buffer(v);
  if (buf.size() != g.size()) {
    throw DimensionError("gradient of shape " + to_string(g.shape()) + " for value of shape " +
                         to_string(buf.shape()));
  }
  as_matrix(buf).array() += ConstMatrixMap(g.raw(), static_cast<Eigen::Index>(buf.rows()),
                                           static_cast<Eigen::Index>(buf.cols()))
                                .array();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward root belongs to another tape");
  const Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " +
                        to_string(root.value.shape()));
  }
  if (!root.requires_grad) return;
  for (Node& node : nodes_) {
    if (!node.is_leaf) node.grad = Tensor();
  }
  grad_buffer(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_leaf || !node.backward || node.grad.size() != node.value.size() ||
        node.value.size() == 0) {
      continue;
    }
    node.backward(*this, node.grad);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad = Tensor();
}

void Tape::note_margin(double margin) { kink_margin_ = std::min(kink_margin_, margin); }

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows() || bv.rank() > 2) {
    throw DimensionError("matmul: inner dimensions differ for " + to_string(av.shape()) +
                         " and " + to_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      as_matrix(t.grad_buffer(a)).noalias() += as_matrix(g) * as_matrix(b.value()).transpose();
    }
    if (t.requires_grad(b)) {
      as_matrix(t.grad_buffer(b)).noalias() += as_matrix(a.value()).transpose() * as_matrix(g);
    }
  });
}

Var elementwise(BinaryOp op, Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = broadcast_mode(av, bv, "elementwise");
  const std::size_t rows = av.rows();
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = av[r * cols + c];
      const double y = bv[b_index(mode, r, c, cols)];
      double z = 0.0;
      switch (op) {
        case BinaryOp::add: z = x + y; break;
        case BinaryOp::sub: z = x - y; break;
        case BinaryOp::mul: z = x * y; break;
      }
      out[r * cols + c] = z;
    }
  }
  const Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs, [op, a, b, mode](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t rows = av.rows();
    const std::size_t cols = av.cols();
    const bool need_a = t.requires_grad(a);
    const bool need_b = t.requires_grad(b);
    Tensor* ga = need_a ? &t.grad_buffer(a) : nullptr;
    Tensor* gb = need_b ? &t.grad_buffer(b) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const std::size_t j = b_index(mode, r, c, cols);
        const double gi = g[i];
        switch (op) {
          case BinaryOp::add:
            if (ga) (*ga)[i] += gi;
            if (gb) (*gb)[j] += gi;
            break;
          case BinaryOp::sub:
            if (ga) (*ga)[i] += gi;
            if (gb) (*gb)[j] -= gi;
            break;
          case BinaryOp::mul:
            if (ga) (*ga)[i] += gi * bv[j];
            if (gb) (*gb)[j] += gi * av[i];
            break;
        }
      }
    }
  });
}

Var elementwise(UnaryOp op, Var a) {
  Tape& tape = *a.tape;
  const Tensor& av = a.value();
  Tensor out(av.shape());
  double margin = 1e300;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    margin = std::min(margin, std::abs(x));
    out[i] = op == UnaryOp::relu ? (x > 0.0 ? x : 0.0) : std::abs(x);
  }
  const Var inputs[] = {a};
  Var result = tape.record(std::move(out), inputs, [op, a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const double x = av[i];
      // Subgradient 0 at the kink for both ops.
      double d = 0.0;
      if (op == UnaryOp::relu) {
        d = x > 0.0 ? 1.0 : 0.0;
      } else {
        d = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      }
      ga[i] += g[i] * d;
    }
  });
  if (tape.requires_grad(result)) tape.note_margin(margin);
  return result;
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  as_matrix(out) *= factor;
  const Var inputs[] = {a};
  return a.tape->record(std::move(out), inputs, [a, factor](Tape& t, const Tensor& g) {
    as_matrix(t.grad_buffer(a)) += factor * as_matrix(g);
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  as_matrix(out).array() += offset;
  const Var inputs[] = {a};
  return a.tape->record(std::move(out), inputs,
                        [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no parts");
  Tape& tape = *parts.front().tape;
  const Shape lead = leading(parts.front().shape());
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape != &tape) throw ContractError("concat_last: parts on different tapes");
    if (leading(p.shape()) != lead) {
      throw DimensionError("concat_last: leading dims " + to_string(p.shape()) + " vs " +
                           to_string(parts.front().shape()));
    }
    total += p.value().cols();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  const std::size_t rows = out.rows();
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    offsets.push_back(offset);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.raw() + r * pv.cols(), pv.cols(), out.raw() + r * total + offset);
    }
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), inputs,
                     [inputs, offsets, total](Tape& t, const Tensor& g) {
                       const std::size_t rows = g.rows();
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         if (!t.requires_grad(inputs[k])) continue;
                         Tensor& gp = t.grad_buffer(inputs[k]);
                         const std::size_t w = gp.cols();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* src = g.raw() + r * total + offsets[k];
                           double* dst = gp.raw() + r * w;
                           for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
                         }
                       }
                     });
}

Var slice_last(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.cols()) {
    throw IndexError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(av.shape()));
  }
  Shape out_shape = leading(av.shape());
  out_shape.push_back(end - begin);
  Tensor out(out_shape);
  const std::size_t w = end - begin;
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.raw() + r * av.cols() + begin, w, out.raw() + r * w);
  }
  const Var inputs[] = {a};
  return a.tape->record(std::move(out), inputs, [a, begin, w](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const std::size_t cols = ga.cols();
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows();
  const std::size_t d = av.cols();
  Tensor out({idx.size(), d});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= n) {
      throw IndexError("gather_rows: index " + std::to_string(idx[k]) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    std::copy_n(av.raw() + idx[k] * d, d, out.raw() + k * d);
  }
  const Var inputs[] = {a};
  return a.tape->record(std::move(out), inputs,
                        [a, index = std::vector<std::size_t>(idx.begin(), idx.end()), d](
                            Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_buffer(a);
                          for (std::size_t k = 0; k < index.size(); ++k) {
                            double* dst = ga.raw() + index[k] * d;
                            const double* src = g.raw() + k * d;
                            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                          }
                        });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const Var inputs[] = {a};
  return a.tape->record(Tensor::scalar(s), inputs, [a](Tape& t, const Tensor& g) {
    as_matrix(t.grad_buffer(a)).array() += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var inputs[] = {a};
  return a.tape->record(std::move(out), inputs,
                        [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var rowwise_cosine(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("rowwise_cosine: " + to_string(av.shape()) + " vs " +
                         to_string(bv.shape()));
  }
  const std::size_t rows = av.rows();
  const std::size_t d = av.cols();
  Tensor out({rows, 1});
  std::vector<double> norm_a(rows), norm_b(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double x = av[r * d + c];
      const double y = bv[r * d + c];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    norm_a[r] = std::sqrt(na);
    norm_b[r] = std::sqrt(nb);
    out[r] = (norm_a[r] > 0.0 && norm_b[r] > 0.0) ? dot / (norm_a[r] * norm_b[r]) : 0.0;
  }
  const Var inputs[] = {a, b};
  Tensor cos = out;
  return tape.record(std::move(out), inputs,
                     [a, b, cos = std::move(cos), norm_a = std::move(norm_a),
                      norm_b = std::move(norm_b)](Tape& t, const Tensor& g) {
                       const Tensor& av = a.value();
                       const Tensor& bv = b.value();
                       const std::size_t d = av.cols();
                       const bool need_a = t.requires_grad(a);
                       const bool need_b = t.requires_grad(b);
                       Tensor* ga = need_a ? &t.grad_buffer(a) : nullptr;
                       Tensor* gb = need_b ? &t.grad_buffer(b) : nullptr;
                       for (std::size_t r = 0; r < av.rows(); ++r) {
                         const double na = norm_a[r];
                         const double nb = norm_b[r];
                         if (na == 0.0 || nb == 0.0) continue;
                         const double c = cos[r];
                         const double gr = g[r];
                         for (std::size_t k = 0; k < d; ++k) {
                           const double x = av[r * d + k];
                           const double y = bv[r * d + k];
                           if (ga) (*ga)[r * d + k] += gr * (y / (na * nb) - c * x / (na * na));
                           if (gb) (*gb)[r * d + k] += gr * (x / (na * nb) - c * y / (nb * nb));
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double evaluate(const TapeFunction& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, true));
  const Var out = f(tape, vars);
  const Tensor& v = out.value();
  if (v.size() != 1) throw ContractError("grad_check: function is not scalar-valued");
  if (!std::isfinite(v[0])) throw EvaluationError("grad_check: non-finite function value");
  return v[0];
}

}  // namespace

double grad_check(const TapeFunction& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.leaf(x, true));
    const Var out = f(tape, vars);
    if (out.value().size() != 1) throw ContractError("grad_check: function is not scalar-valued");
    if (!std::isfinite(out.value()[0])) {
      throw EvaluationError("grad_check: non-finite function value");
    }
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double fp = evaluate(f, probe);
      probe[k][i] = x0 - h;
      const double fm = evaluate(f, probe);
      probe[k][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - fd) / std::max(1e-8, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h) {
  return grad_check([&f](Tape& tape, std::span<const Var> v) { return f(tape, v[0]); },
                    std::vector<Tensor>{x}, h);
}

}  // namespace kits
