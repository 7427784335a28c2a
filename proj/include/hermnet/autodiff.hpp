#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// Every operation appends a node to a Tape. Node ids are assigned in creation
// order, so reverse id order is a valid reverse topological order. Backward
// rules are themselves written with tape operations; running backward with
// create_graph = true records the adjoint computation, which can then be
// differentiated again (forces are -dE/dx, and force-matching losses need
// the parameter gradient of that quantity).

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hermnet/error.hpp"
#include "hermnet/tensor.hpp"

namespace hermnet::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kPow,
  kSin,
  kCos,
  kSilu,
  kMatMul,
  kMatMulTN,
  kTranspose,
  kSum,
  kExpand,
  kSumLast,
  kBcastLast,
  kSumRows,
  kBcastRows,
  kSumSpatial,
  kBcastSpatial,
  kSlice,
  kPad,
  kConcat,
  kGather,
  kScatterAdd,
  kReshape,
};

using Index = std::shared_ptr<const std::vector<std::size_t>>;

inline Index make_index(std::vector<std::size_t> idx) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(idx));
}

struct TapeNode {
  Op op = Op::kLeaf;
  std::vector<int> inputs;
  Tensor value;
  bool requires_grad = false;
  // Op parameters. `scalar` is the factor of Scale/AddScalar/Pow and the
  // derivative order of Silu. `start`/`length` describe slices, the
  // broadcast extent or the scatter target row count.
  double scalar = 0.0;
  std::size_t start = 0;
  std::size_t length = 0;
  Shape aux;
  Index index;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  int id() const noexcept { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Gradients;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    TapeNode node;
    node.value = std::move(value);
    return append(std::move(node), false);
  }

  /// Differentiable leaf.
  Var variable(Tensor value) {
    TapeNode node;
    node.value = std::move(value);
    return append(std::move(node), true);
  }

  const TapeNode& node(int id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return recording_; }

  /// Appends an op node. requires_grad is inherited from the inputs while the
  /// tape is recording.
  Var push(TapeNode node) {
    bool grad = false;
    if (recording_) {
      for (int in : node.inputs) grad = grad || nodes_[in].requires_grad;
    }
    return append(std::move(node), grad);
  }

  void check_owner(const Var& v) const {
    if (!v.valid() || &v.tape() != this) {
      throw Error("variable does not belong to this tape");
    }
  }

  /// Reverse sweep from a scalar root. When `wrt` is non-empty only paths
  /// reaching those variables are propagated. Each root may be swept once.
  Gradients backward(const Var& root, std::span<const Var> wrt = {},
                     bool create_graph = false);

 private:
  Var append(TapeNode node, bool requires_grad) {
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  void propagate(int id, const Var& grad, const std::vector<char>& needed,
                 std::vector<int>& adjoint);

  std::vector<TapeNode> nodes_;
  std::unordered_set<int> consumed_;
  bool recording_ = true;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }
inline bool Var::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

/// Adjoints produced by Tape::backward.
class Gradients {
 public:
  Gradients(Tape* tape, std::vector<int> adjoint)
      : tape_(tape), adjoint_(std::move(adjoint)) {}

  bool has(const Var& x) const {
    return x.id() >= 0 && static_cast<std::size_t>(x.id()) < adjoint_.size() &&
           adjoint_[x.id()] >= 0;
  }

  /// Adjoint of x as a tape variable (a zero constant when unreachable).
  Var of(const Var& x) const {
    if (has(x)) return Var(tape_, adjoint_[x.id()]);
    return tape_->constant(Tensor(x.shape()));
  }

  Tensor tensor(const Var& x) const {
    if (has(x)) return tape_->node(adjoint_[x.id()]).value;
    return Tensor(x.shape());
  }

 private:
  Tape* tape_;
  std::vector<int> adjoint_;
};

namespace detail {

inline Tape& common_tape(const Var& a, const Var& b) {
  a.tape().check_owner(b);
  return a.tape();
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

inline Shape with_last(Shape s, std::size_t last) {
  s.push_back(last);
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// k-th derivative of x * sigmoid(x), k in [0, 3].
inline double silu_derivative(double x, int k) {
  const double s = sigmoid(x);
  const double q = s * (1.0 - s);
  switch (k) {
    case 0:
      return x * s;
    case 1:
      return s * (1.0 + x * (1.0 - s));
    case 2:
      return q * (2.0 + x * (1.0 - 2.0 * s));
    case 3:
      return q * (3.0 * (1.0 - 2.0 * s) + x * (1.0 - 6.0 * s + 6.0 * s * s));
    case 4:
      return q * (4.0 * (1.0 - 6.0 * s + 6.0 * s * s) +
                  x * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s));
    default:
      throw DomainError("silu derivative of order " + std::to_string(k) +
                        " is not available");
  }
}

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

template <typename F>
Var unary(Op op, const Var& a, F&& f, double scalar = 0.0) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  TapeNode node;
  node.op = op;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.scalar = scalar;
  return a.tape().push(std::move(node));
}

template <typename F>
Var binary(Op op, const char* name, const Var& a, const Var& b, F&& f) {
  Tape& tape = common_tape(a, b);
  require_same_shape(name, a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  TapeNode node;
  node.op = op;
  node.inputs = {a.id(), b.id()};
  node.value = std::move(out);
  return tape.push(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  return detail::binary(Op::kAdd, "add", a, b,
                        [](double x, double y) { return x + y; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(Op::kSub, "sub", a, b,
                        [](double x, double y) { return x - y; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(Op::kMul, "mul", a, b,
                        [](double x, double y) { return x * y; });
}

inline Var div(const Var& a, const Var& b) {
  for (double y : b.value().data()) {
    if (y == 0.0) throw DomainError("div: zero denominator");
  }
  return detail::binary(Op::kDiv, "div", a, b,
                        [](double x, double y) { return x / y; });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(Op::kScale, a, [c](double x) { return c * x; }, c);
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(Op::kAddScalar, a, [c](double x) { return x + c; }, c);
}

inline Var pow(const Var& a, double p) {
  const bool integral = std::floor(p) == p;
  for (double x : a.value().data()) {
    if ((x < 0.0 && !integral) || (x == 0.0 && p < 0.0)) {
      throw DomainError("pow: base " + std::to_string(x) +
                        " outside the domain of exponent " + std::to_string(p));
    }
  }
  return detail::unary(Op::kPow, a, [p](double x) { return std::pow(x, p); },
                       p);
}

inline Var sin(const Var& a) {
  return detail::unary(Op::kSin, a, [](double x) { return std::sin(x); });
}

inline Var cos(const Var& a) {
  return detail::unary(Op::kCos, a, [](double x) { return std::cos(x); });
}

/// x * sigmoid(x), or its `order`-th derivative.
inline Var silu(const Var& a, int order = 0) {
  if (order < 0 || order > 4) {
    throw DomainError("silu derivative of order " + std::to_string(order) +
                      " is not available");
  }
  return detail::unary(
      Op::kSilu, a,
      [order](double x) { return detail::silu_derivative(x, order); },
      static_cast<double>(order));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., K] x w[K, M] -> [..., M]
inline Var matmul(const Var& a, const Var& w) {
  Tape& tape = detail::common_tape(a, w);
  const Tensor& x = a.value();
  const Tensor& y = w.value();
  if (x.rank() < 1 || y.rank() != 2 || x.last() != y.extent(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(x.shape()) +
                     " by " + shape_string(y.shape()));
  }
  const std::size_t rows = x.leading();
  const std::size_t k = y.extent(0);
  const std::size_t m = y.extent(1);
  Tensor out(detail::with_last(detail::drop_last(x.shape()), m));
  if (rows && m) {
    detail::MutMap(out.raw(), rows, m).noalias() =
        detail::ConstMap(x.raw(), rows, k) * detail::ConstMap(y.raw(), k, m);
  }
  TapeNode node;
  node.op = Op::kMatMul;
  node.inputs = {a.id(), w.id()};
  node.value = std::move(out);
  return tape.push(std::move(node));
}

/// a[..., K]^T x b[..., M] -> [K, M], contracting all leading axes.
inline Var matmul_tn(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() < 1 || y.rank() < 1 || x.leading() != y.leading()) {
    throw ShapeError("matmul_tn: leading extents differ " +
                     shape_string(x.shape()) + " vs " +
                     shape_string(y.shape()));
  }
  const std::size_t rows = x.leading();
  const std::size_t k = x.last();
  const std::size_t m = y.last();
  Tensor out(Shape{k, m});
  if (k && m) {
    detail::MutMap(out.raw(), k, m).noalias() =
        detail::ConstMap(x.raw(), rows, k).transpose() *
        detail::ConstMap(y.raw(), rows, m);
  }
  TapeNode node;
  node.op = Op::kMatMulTN;
  node.inputs = {a.id(), b.id()};
  node.value = std::move(out);
  return tape.push(std::move(node));
}

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected rank 2, got " +
                     shape_string(x.shape()));
  }
  const std::size_t r = x.extent(0);
  const std::size_t c = x.extent(1);
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  TapeNode node;
  node.op = Op::kTranspose;
  node.inputs = {a.id()};
  node.value = std::move(out);
  return a.tape().push(std::move(node));
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  TapeNode node;
  node.op = Op::kSum;
  node.inputs = {a.id()};
  node.value = Tensor::scalar(s);
  return a.tape().push(std::move(node));
}

/// Broadcasts a one-element tensor to `shape`.
inline Var expand(const Var& a, Shape shape) {
  if (a.value().size() != 1) {
    throw ShapeError("expand: source must hold one element, got " +
                     shape_string(a.shape()));
  }
  TapeNode node;
  node.op = Op::kExpand;
  node.inputs = {a.id()};
  node.value = Tensor(shape, a.value()[0]);
  node.aux = std::move(shape);
  return a.tape().push(std::move(node));
}

/// [..., M] -> [...]
inline Var sum_last(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() < 1) throw ShapeError("sum_last: rank-0 input");
  const std::size_t m = x.last();
  Tensor out(detail::drop_last(x.shape()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x[i * m + j];
    out[i] = s;
  }
  TapeNode node;
  node.op = Op::kSumLast;
  node.inputs = {a.id()};
  node.value = std::move(out);
  return a.tape().push(std::move(node));
}

/// [...] -> [..., m], repeating each element along a new last axis.
inline Var bcast_last(const Var& a, std::size_t m) {
  const Tensor& x = a.value();
  Tensor out(detail::with_last(x.shape(), m));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i];
  }
  TapeNode node;
  node.op = Op::kBcastLast;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.length = m;
  return a.tape().push(std::move(node));
}

/// [..., M] -> [M], summing over every leading axis.
inline Var sum_rows(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() < 1) throw ShapeError("sum_rows: rank-0 input");
  const std::size_t m = x.last();
  const std::size_t rows = x.leading();
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  }
  TapeNode node;
  node.op = Op::kSumRows;
  node.inputs = {a.id()};
  node.value = std::move(out);
  return a.tape().push(std::move(node));
}

/// [M] -> [leading..., M]
inline Var bcast_rows(const Var& a, const Shape& leading) {
  const Tensor& x = a.value();
  if (x.rank() != 1) {
    throw ShapeError("bcast_rows: expected rank 1, got " +
                     shape_string(x.shape()));
  }
  const std::size_t m = x.size();
  Tensor out(detail::with_last(leading, m));
  const std::size_t rows = shape_size(leading);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(x.data().begin(), x.data().end(), out.raw() + i * m);
  }
  TapeNode node;
  node.op = Op::kBcastRows;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.aux = leading;
  return a.tape().push(std::move(node));
}

/// [N, K, F] -> [N, F], summing over the spatial axis.
inline Var sum_spatial(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 3) {
    throw ShapeError("sum_spatial: expected [N,K,F], got " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.extent(0), k = x.extent(1), f = x.extent(2);
  Tensor out(Shape{n, f});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < k; ++d) {
      const double* row = x.raw() + (i * k + d) * f;
      double* dst = out.raw() + i * f;
      for (std::size_t c = 0; c < f; ++c) dst[c] += row[c];
    }
  }
  TapeNode node;
  node.op = Op::kSumSpatial;
  node.inputs = {a.id()};
  node.value = std::move(out);
  return a.tape().push(std::move(node));
}

/// [N, F] -> [N, k, F]
inline Var bcast_spatial(const Var& a, std::size_t k = 3) {
  const Tensor& x = a.value();
  if (x.rank() != 2) {
    throw ShapeError("bcast_spatial: expected [N,F], got " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.extent(0), f = x.extent(1);
  Tensor out(Shape{n, k, f});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < k; ++d) {
      std::copy(x.raw() + i * f, x.raw() + (i + 1) * f,
                out.raw() + (i * k + d) * f);
    }
  }
  TapeNode node;
  node.op = Op::kBcastSpatial;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.length = k;
  return a.tape().push(std::move(node));
}

// ---------------------------------------------------------------------------
// Structural

/// Columns [start, start + len) of the last axis.
inline Var slice_last(const Var& a, std::size_t start, std::size_t len) {
  const Tensor& x = a.value();
  if (x.rank() < 1 || start + len > x.last()) {
    throw ShapeError("slice_last: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of range for " +
                     shape_string(x.shape()));
  }
  const std::size_t m = x.last();
  const std::size_t rows = x.leading();
  Tensor out(detail::with_last(detail::drop_last(x.shape()), len));
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(x.raw() + i * m + start, x.raw() + i * m + start + len,
              out.raw() + i * len);
  }
  TapeNode node;
  node.op = Op::kSlice;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.start = start;
  node.length = len;
  return a.tape().push(std::move(node));
}

/// Zero-pads the last axis to `total`, placing the input at `start`.
inline Var pad_last(const Var& a, std::size_t start, std::size_t total) {
  const Tensor& x = a.value();
  if (x.rank() < 1 || start + x.last() > total) {
    throw ShapeError("pad_last: input " + shape_string(x.shape()) +
                     " does not fit at " + std::to_string(start) + " in " +
                     std::to_string(total));
  }
  const std::size_t len = x.last();
  const std::size_t rows = x.leading();
  Tensor out(detail::with_last(detail::drop_last(x.shape()), total));
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(x.raw() + i * len, x.raw() + (i + 1) * len,
              out.raw() + i * total + start);
  }
  TapeNode node;
  node.op = Op::kPad;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.start = start;
  node.length = total;
  return a.tape().push(std::move(node));
}

/// Concatenates along the last axis; leading shapes must agree.
inline Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Tape& tape = parts.front().tape();
  const Shape lead = detail::drop_last(parts.front().shape());
  std::size_t total = 0;
  for (const Var& p : parts) {
    tape.check_owner(p);
    if (p.value().rank() < 1 || detail::drop_last(p.shape()) != lead) {
      throw ShapeError("concat_last: leading shape mismatch " +
                       shape_string(p.shape()));
    }
    total += p.value().last();
  }
  const std::size_t rows = shape_size(lead);
  Tensor out(detail::with_last(lead, total));
  std::size_t offset = 0;
  TapeNode node;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    const std::size_t len = x.last();
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(x.raw() + i * len, x.raw() + (i + 1) * len,
                out.raw() + i * total + offset);
    }
    offset += len;
    node.inputs.push_back(p.id());
  }
  node.op = Op::kConcat;
  node.value = std::move(out);
  return tape.push(std::move(node));
}

inline Var concat_last(std::initializer_list<Var> parts) {
  return concat_last(std::span<const Var>(parts.begin(), parts.size()));
}

/// Rows of `a` (axis 0) selected by `index`.
inline Var gather(const Var& a, const Index& index) {
  const Tensor& x = a.value();
  if (x.rank() < 1) throw ShapeError("gather: rank-0 input");
  const std::size_t n = x.extent(0);
  const std::size_t row =
      shape_size(Shape(x.shape().begin() + 1, x.shape().end()));
  Shape shape = x.shape();
  shape[0] = index->size();
  Tensor out(shape);
  for (std::size_t e = 0; e < index->size(); ++e) {
    const std::size_t r = (*index)[e];
    if (r >= n) {
      throw ShapeError("gather: row " + std::to_string(r) +
                       " out of range for " + shape_string(x.shape()));
    }
    std::copy(x.raw() + r * row, x.raw() + (r + 1) * row, out.raw() + e * row);
  }
  TapeNode node;
  node.op = Op::kGather;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.index = index;
  return a.tape().push(std::move(node));
}

/// out[index[e]] += a[e]; out has `rows` rows.
inline Var scatter_add(const Var& a, const Index& index, std::size_t rows) {
  const Tensor& x = a.value();
  if (x.rank() < 1 || x.extent(0) != index->size()) {
    throw ShapeError("scatter_add: " + shape_string(x.shape()) +
                     " rows do not match index of length " +
                     std::to_string(index->size()));
  }
  const std::size_t row =
      shape_size(Shape(x.shape().begin() + 1, x.shape().end()));
  Shape shape = x.shape();
  shape[0] = rows;
  Tensor out(shape);
  for (std::size_t e = 0; e < index->size(); ++e) {
    const std::size_t r = (*index)[e];
    if (r >= rows) {
      throw ShapeError("scatter_add: target row " + std::to_string(r) +
                       " out of range " + std::to_string(rows));
    }
    const double* src = x.raw() + e * row;
    double* dst = out.raw() + r * row;
    for (std::size_t c = 0; c < row; ++c) dst[c] += src[c];
  }
  TapeNode node;
  node.op = Op::kScatterAdd;
  node.inputs = {a.id()};
  node.value = std::move(out);
  node.index = index;
  node.length = rows;
  return a.tape().push(std::move(node));
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " +
                     shape_string(shape));
  }
  TapeNode node;
  node.op = Op::kReshape;
  node.inputs = {a.id()};
  node.value = a.value().reshaped(shape);
  node.aux = std::move(shape);
  return a.tape().push(std::move(node));
}

// ---------------------------------------------------------------------------
// Composites

/// Per-channel inner product over the spatial axis: [N,3,F]x[N,3,F] -> [N,F].
inline Var inner_spatial(const Var& a, const Var& b) {
  return sum_spatial(mul(a, b));
}

/// Per-channel Euclidean norm over the spatial axis, sqrt(|v|^2 + eps).
inline Var norm_spatial(const Var& v, double eps) {
  return pow(add_scalar(inner_spatial(v, v), eps), 0.5);
}

/// Scales each vector channel: v[N,3,F] * s[N,F].
inline Var scale_vectors(const Var& v, const Var& s) {
  return mul(v, bcast_spatial(s, v.value().extent(1)));
}

/// Outer product of directions d[N,3] with channel weights c[N,F] -> [N,3,F].
inline Var outer(const Var& d, const Var& c) {
  return mul(bcast_last(d, c.value().last()), bcast_spatial(c, d.value().last()));
}

/// Elementwise x * w[M] over the last axis.
inline Var scale_last(const Var& x, const Var& w) {
  return mul(x, bcast_rows(w, detail::drop_last(x.shape())));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Backward

inline Gradients Tape::backward(const Var& root, std::span<const Var> wrt,
                                bool create_graph) {
  check_owner(root);
  if (root.value().size() != 1) {
    throw ShapeError("backward: root must be scalar, got " +
                     shape_string(root.shape()));
  }
  if (!consumed_.insert(root.id()).second) {
    throw Error("backward: root node " + std::to_string(root.id()) +
                " was already consumed");
  }
  const std::size_t n = static_cast<std::size_t>(root.id()) + 1;
  std::vector<char> needed(n, 0);
  if (wrt.empty()) {
    for (std::size_t i = 0; i < n; ++i) needed[i] = nodes_[i].requires_grad;
  } else {
    for (const Var& w : wrt) {
      check_owner(w);
      if (static_cast<std::size_t>(w.id()) < n) {
        needed[w.id()] = nodes_[w.id()].requires_grad;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (needed[i] || !nodes_[i].requires_grad) continue;
      for (int in : nodes_[i].inputs) {
        if (needed[in]) {
          needed[i] = 1;
          break;
        }
      }
    }
  }

  std::vector<int> adjoint(n, -1);
  const bool saved = recording_;
  recording_ = create_graph;
  try {
    adjoint[root.id()] = constant(Tensor(root.shape(), 1.0)).id();
    for (std::size_t i = n; i-- > 0;) {
      if (adjoint[i] < 0 || !needed[i] || nodes_[i].op == Op::kLeaf) continue;
      propagate(static_cast<int>(i), Var(this, adjoint[i]), needed, adjoint);
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;
  return Gradients(this, std::move(adjoint));
}

inline void Tape::propagate(int id, const Var& g,
                            const std::vector<char>& needed,
                            std::vector<int>& adjoint) {
  // Copy what we need: appending nodes may reallocate nodes_.
  const Op op = nodes_[id].op;
  const std::vector<int> in = nodes_[id].inputs;
  const double scalar = nodes_[id].scalar;
  const std::size_t start = nodes_[id].start;
  const Index index = nodes_[id].index;

  auto input = [&](std::size_t k) { return Var(this, in[k]); };
  auto wants = [&](std::size_t k) { return needed[in[k]] != 0; };
  auto accumulate = [&](std::size_t k, const Var& contribution) {
    int& slot = adjoint[in[k]];
    slot = slot < 0 ? contribution.id()
                    : add(Var(this, slot), contribution).id();
  };
  auto shape_of = [&](std::size_t k) { return nodes_[in[k]].value.shape(); };

  switch (op) {
    case Op::kLeaf:
      break;
    case Op::kAdd:
      if (wants(0)) accumulate(0, g);
      if (wants(1)) accumulate(1, g);
      break;
    case Op::kSub:
      if (wants(0)) accumulate(0, g);
      if (wants(1)) accumulate(1, scale(g, -1.0));
      break;
    case Op::kMul:
      if (wants(0)) accumulate(0, mul(g, input(1)));
      if (wants(1)) accumulate(1, mul(g, input(0)));
      break;
    case Op::kDiv:
      if (wants(0)) accumulate(0, div(g, input(1)));
      if (wants(1)) {
        accumulate(1, scale(div(mul(g, Var(this, id)), input(1)), -1.0));
      }
      break;
    case Op::kScale:
      accumulate(0, scale(g, scalar));
      break;
    case Op::kAddScalar:
      accumulate(0, g);
      break;
    case Op::kPow:
      if (scalar == 1.0) {
        accumulate(0, g);
      } else {
        accumulate(0, mul(g, scale(pow(input(0), scalar - 1.0), scalar)));
      }
      break;
    case Op::kSin:
      accumulate(0, mul(g, cos(input(0))));
      break;
    case Op::kCos:
      accumulate(0, scale(mul(g, sin(input(0))), -1.0));
      break;
    case Op::kSilu:
      accumulate(0, mul(g, silu(input(0), static_cast<int>(scalar) + 1)));
      break;
    case Op::kMatMul:
      if (wants(0)) accumulate(0, matmul(g, transpose(input(1))));
      if (wants(1)) accumulate(1, matmul_tn(input(0), g));
      break;
    case Op::kMatMulTN: {
      // out[K,M] = A^T B
      if (wants(0)) {
        Var ga = matmul(input(1), transpose(g));
        if (ga.shape() != shape_of(0)) ga = reshape(ga, shape_of(0));
        accumulate(0, ga);
      }
      if (wants(1)) {
        Var gb = matmul(input(0), g);
        if (gb.shape() != shape_of(1)) gb = reshape(gb, shape_of(1));
        accumulate(1, gb);
      }
      break;
    }
    case Op::kTranspose:
      accumulate(0, transpose(g));
      break;
    case Op::kSum:
      accumulate(0, expand(g, shape_of(0)));
      break;
    case Op::kExpand: {
      Var s = sum(g);
      if (s.shape() != shape_of(0)) s = reshape(s, shape_of(0));
      accumulate(0, s);
      break;
    }
    case Op::kSumLast:
      accumulate(0, bcast_last(g, nodes_[in[0]].value.last()));
      break;
    case Op::kBcastLast:
      accumulate(0, sum_last(g));
      break;
    case Op::kSumRows:
      accumulate(0, bcast_rows(g, detail::drop_last(shape_of(0))));
      break;
    case Op::kBcastRows:
      accumulate(0, sum_rows(g));
      break;
    case Op::kSumSpatial:
      accumulate(0, bcast_spatial(g, nodes_[in[0]].value.extent(1)));
      break;
    case Op::kBcastSpatial:
      accumulate(0, sum_spatial(g));
      break;
    case Op::kSlice:
      accumulate(0, pad_last(g, start, nodes_[in[0]].value.last()));
      break;
    case Op::kPad:
      accumulate(0, slice_last(g, start, nodes_[in[0]].value.last()));
      break;
    case Op::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t len = nodes_[in[k]].value.last();
        if (wants(k)) accumulate(k, slice_last(g, offset, len));
        offset += len;
      }
      break;
    }
    case Op::kGather:
      accumulate(0, scatter_add(g, index, nodes_[in[0]].value.extent(0)));
      break;
    case Op::kScatterAdd:
      accumulate(0, gather(g, index));
      break;
    case Op::kReshape:
      accumulate(0, reshape(g, shape_of(0)));
      break;
  }
}

}  // namespace hermnet::ad
