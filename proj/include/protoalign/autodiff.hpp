#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "protoalign/tensor.hpp"

namespace protoalign {

class Tape;
class BackwardContext;

/// Handle to a value recorded on a Tape. Cheap to copy; becomes invalid when
/// the owning tape is cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id, std::uint64_t generation)
      : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
  std::uint64_t generation_ = 0;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Reverse-mode gradient tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to an external tensor; backward accumulates into `param.grad()`
  /// when `param.requires_grad()`.
  Var parameter(Tensor& param);
  /// Unbound leaf that requires grad; read its gradient with grad().
  Var variable(Tensor value);
  Var constant(Tensor value);

  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  void backward(const Var& loss);
  /// Gradient of a requires-grad node after backward (zeros if unreached).
  Tensor grad(const Var& v) const;

  /// Frees every recorded node. Handles issued before the clear become invalid.
  void clear();
  std::size_t size() const { return nodes_.size(); }

  void check(const Var& v) const;

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    const char* op;
    Tensor value;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor* bound = nullptr;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

class BackwardContext {
 public:
  std::span<const double> out_grad() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t k) const;
  bool needs_grad(std::size_t k) const;
  /// Gradient buffer of input k; accumulate into it with +=.
  std::span<double> input_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::uint32_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::uint32_t node_;
};

// Forward primitives. Each records itself on the operands' tape. Shape
// contracts are listed per primitive; violations raise ShapeError naming the
// primitive and both shapes.

/// (n x k) . (k x m) -> (n x m)
Var matmul(const Var& a, const Var& b);
/// Same shapes, or `b` a single row (1 x m or (m,)) added to every row of `a`.
Var add(const Var& a, const Var& b);
/// Same shapes.
Var sub(const Var& a, const Var& b);
/// Elementwise product, same shapes.
Var mul(const Var& a, const Var& b);
/// Multiplies row i of `x` (n x m) by s[i]; `s` is (n x 1) or (n,).
Var scale_rows(const Var& x, const Var& s);
/// Column concatenation: (n x a), (n x b) -> (n x (a+b)).
Var concat(const Var& a, const Var& b);
/// Row concatenation: (n x m), (k x m) -> ((n+k) x m).
Var concat_rows(const Var& a, const Var& b);
Var abs(const Var& x);
Var sigmoid(const Var& x);
/// Row-wise softmax with max subtraction.
Var softmax(const Var& x);
/// Natural log with inputs clamped below at 1e-12 (zero gradient where clamped).
Var log(const Var& x);
Var exp(const Var& x);
Var relu(const Var& x);
/// Elementwise power for a constant exponent; inputs must be positive unless
/// the exponent is a non-negative integer.
Var pow(const Var& x, double exponent);
/// (n x m) -> (1 x m), averaging over rows.
Var mean_rows(const Var& x);
/// (n x m) -> (n x 1), summing across columns.
Var row_sum(const Var& x);
/// Sum of all entries -> scalar.
Var sum(const Var& x);
/// log(sum(exp(x))) over all entries -> scalar.
Var logsumexp(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var transpose(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Rows of `x` at `indices` (repetition allowed).
Var gather_rows(const Var& x, std::span<const std::size_t> indices);
/// Flat entries of `x` at `indices` -> (k,).
Var select(const Var& x, std::span<const std::size_t> indices);

using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|) with central differences.
double gradient_check(const ScalarFn& f, const Tensor& x, double h = 1e-6);

}  // namespace protoalign
