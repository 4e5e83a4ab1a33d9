#include "protoalign/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace protoalign {

namespace {

constexpr double kLogClamp = 1e-12;

bool is_row_vector_of(const Shape& b, std::size_t cols) {
  return (b.size() == 1 && b[0] == cols) || (b.size() == 2 && b[0] == 1 && b[1] == cols);
}

void require_matrix(const char* op, const Var& x) {
  if (x.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " +
                     shape_to_string(x.shape()));
  }
}

void require_same_tape(const char* op, const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands are not on the same tape");
  }
}

Tape& tape_of(const Var& v) {
  if (v.tape() == nullptr) throw std::invalid_argument("operation on an unbound Var");
  return *v.tape();
}

template <typename F>
Var unary(const char* op, const Var& x, F&& f, BackwardFn bw) {
  Tensor out = x.value();
  out.clear_grad();
  out.set_requires_grad(false);
  for (double& v : out.values()) v = f(v);
  return tape_of(x).record(op, std::move(out), {x}, std::move(bw));
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw std::invalid_argument("value of an unbound Var");
  tape_->check(*this);
  return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const {
  tape_->check(*this);
  return tape_->nodes_[id_].requires_grad;
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this) throw std::invalid_argument("Var belongs to a different tape");
  if (v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw std::logic_error("Var refers to a node of a cleared tape");
  }
}

Var Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("tape is full");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), generation_);
}

Var Tape::parameter(Tensor& param) {
  Node n{"parameter", Tensor(param.shape(), param.storage()), {}, {}, {}, param.requires_grad(),
         &param};
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  value.clear_grad();
  Node n{"variable", std::move(value), {}, {}, {}, true, nullptr};
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  value.clear_grad();
  value.set_requires_grad(false);
  Node n{"constant", std::move(value), {}, {}, {}, false, nullptr};
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n{op, std::move(value), {}, {}, {}, false, nullptr};
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss is not on this tape");
  check(loss);
  const Node& root = nodes_[loss.id_];
  if (root.value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_to_string(root.value.shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!root.requires_grad) return;
  nodes_[loss.id_].grad.assign(1, 1.0);

  for (std::int64_t id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      for (std::uint32_t in : n.inputs) {
        Node& src = nodes_[in];
        if (src.requires_grad && src.grad.empty()) src.grad.assign(src.value.numel(), 0.0);
      }
      BackwardContext ctx(*this, static_cast<std::uint32_t>(id));
      n.backward(ctx);
    }
    if (n.bound != nullptr) n.bound->accumulate_grad(n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  check(v);
  const Node& n = nodes_[v.id_];
  if (!n.requires_grad) throw std::invalid_argument("grad: Var does not require grad");
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

std::span<const double> BackwardContext::out_grad() const { return tape_.nodes_[node_].grad; }
const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }
const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}
bool BackwardContext::needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}
std::span<double> BackwardContext::input_grad(std::size_t k) {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].grad;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b) {
  require_same_tape("matmul", a, b);
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw shape_error("matmul", a.shape(), b.shape());
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
    }
  return tape_of(a).record(
      "matmul", Tensor({n, m}, std::move(out)), {a, b}, [n, k, m](BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        const auto& A = ctx.input(0).storage();
        const auto& B = ctx.input(1).storage();
        if (ctx.needs_grad(0)) {
          auto ga = ctx.input_grad(0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * B[p * m + j];
              ga[i * k + p] += acc;
            }
        }
        if (ctx.needs_grad(1)) {
          auto gb = ctx.input_grad(1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
            }
        }
      });
}

Var add(const Var& a, const Var& b) {
  require_same_tape("add", a, b);
  if (a.shape() == b.shape()) {
    Tensor out = a.value();
    out.clear_grad();
    const auto& bv = b.value().storage();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
    return tape_of(a).record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
      const auto g = ctx.out_grad();
      for (std::size_t k = 0; k < 2; ++k) {
        if (!ctx.needs_grad(k)) continue;
        auto gi = ctx.input_grad(k);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  if (a.shape().size() == 2 && is_row_vector_of(b.shape(), a.cols())) {
    const std::size_t n = a.rows(), m = a.cols();
    Tensor out = a.value();
    out.clear_grad();
    const auto& bv = b.value().storage();
    auto ov = out.values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ov[i * m + j] += bv[j];
    return tape_of(a).record("add", std::move(out), {a, b}, [n, m](BackwardContext& ctx) {
      const auto g = ctx.out_grad();
      if (ctx.needs_grad(0)) {
        auto ga = ctx.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (ctx.needs_grad(1)) {
        auto gb = ctx.input_grad(1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    });
  }
  throw shape_error("add", a.shape(), b.shape());
}

Var sub(const Var& a, const Var& b) {
  require_same_tape("sub", a, b);
  if (a.shape() != b.shape()) throw shape_error("sub", a.shape(), b.shape());
  Tensor out = a.value();
  out.clear_grad();
  const auto& bv = b.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return tape_of(a).record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    if (ctx.needs_grad(0)) {
      auto ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.needs_grad(1)) {
      auto gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape("mul", a, b);
  if (a.shape() != b.shape()) throw shape_error("mul", a.shape(), b.shape());
  Tensor out = a.value();
  out.clear_grad();
  const auto& bv = b.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& A = ctx.input(0).storage();
    const auto& B = ctx.input(1).storage();
    if (ctx.needs_grad(0)) {
      auto ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (ctx.needs_grad(1)) {
      auto gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale_rows(const Var& x, const Var& s) {
  require_same_tape("scale_rows", x, s);
  require_matrix("scale_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  const bool col = (s.shape().size() == 2 && s.shape()[0] == n && s.shape()[1] == 1) ||
                   (s.shape().size() == 1 && s.shape()[0] == n);
  if (!col) throw shape_error("scale_rows", x.shape(), s.shape());
  Tensor out = x.value();
  out.clear_grad();
  const auto& sv = s.value().storage();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) ov[i * m + j] *= sv[i];
  return tape_of(x).record("scale_rows", std::move(out), {x, s}, [n, m](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& X = ctx.input(0).storage();
    const auto& S = ctx.input(1).storage();
    if (ctx.needs_grad(0)) {
      auto gx = ctx.input_grad(0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] * S[i];
    }
    if (ctx.needs_grad(1)) {
      auto gs = ctx.input_grad(1);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * X[i * m + j];
        gs[i] += acc;
      }
    }
  });
}

Var concat(const Var& a, const Var& b) {
  require_same_tape("concat", a, b);
  require_matrix("concat", a);
  require_matrix("concat", b);
  if (a.rows() != b.rows()) throw shape_error("concat", a.shape(), b.shape());
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols(), m = ca + cb;
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * ca), ca,
                out.begin() + static_cast<std::ptrdiff_t>(i * m));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(i * cb), cb,
                out.begin() + static_cast<std::ptrdiff_t>(i * m + ca));
  }
  return tape_of(a).record(
      "concat", Tensor({n, m}, std::move(out)), {a, b}, [n, ca, cb, m](BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        if (ctx.needs_grad(0)) {
          auto ga = ctx.input_grad(0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * m + j];
        }
        if (ctx.needs_grad(1)) {
          auto gb = ctx.input_grad(1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * m + ca + j];
        }
      });
}

Var concat_rows(const Var& a, const Var& b) {
  require_same_tape("concat_rows", a, b);
  require_matrix("concat_rows", a);
  require_matrix("concat_rows", b);
  if (a.cols() != b.cols()) throw shape_error("concat_rows", a.shape(), b.shape());
  const std::size_t na = a.value().numel();
  std::vector<double> out = a.value().storage();
  const auto& bv = b.value().storage();
  out.insert(out.end(), bv.begin(), bv.end());
  return tape_of(a).record("concat_rows", Tensor({a.rows() + b.rows(), a.cols()}, std::move(out)),
                           {a, b}, [na](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             if (ctx.needs_grad(0)) {
                               auto ga = ctx.input_grad(0);
                               for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                             }
                             if (ctx.needs_grad(1)) {
                               auto gb = ctx.input_grad(1);
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                             }
                           });
}

Var abs(const Var& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); }, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& X = ctx.input(0).storage();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0);
      gx[i] += g[i] * s;
    }
  });
}

Var sigmoid(const Var& x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](BackwardContext& ctx) {
        const auto g = ctx.out_grad();
        const auto& Y = ctx.output().storage();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * Y[i] * (1.0 - Y[i]);
      });
}

Var softmax(const Var& x) {
  const std::size_t n = x.rows(), m = x.cols();
  if (x.shape().size() > 2) throw ShapeError("softmax: expected rank <= 2, got " + shape_to_string(x.shape()));
  Tensor out = x.value();
  out.clear_grad();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ov.subspan(i * m, m);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return tape_of(x).record("softmax", std::move(out), {x}, [n, m](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& Y = ctx.output().storage();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * Y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += Y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

Var log(const Var& x) {
  return unary("log", x, [](double v) { return std::log(std::max(v, kLogClamp)); },
               [](BackwardContext& ctx) {
                 const auto g = ctx.out_grad();
                 const auto& X = ctx.input(0).storage();
                 auto gx = ctx.input_grad(0);
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (X[i] > kLogClamp) gx[i] += g[i] / X[i];
               });
}

Var exp(const Var& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& Y = ctx.output().storage();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * Y[i];
  });
}

Var relu(const Var& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    const auto& X = ctx.input(0).storage();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (X[i] > 0.0) gx[i] += g[i];
  });
}

Var pow(const Var& x, double exponent) {
  return unary("pow", x, [exponent](double v) { return std::pow(v, exponent); },
               [exponent](BackwardContext& ctx) {
                 const auto g = ctx.out_grad();
                 const auto& X = ctx.input(0).storage();
                 auto gx = ctx.input_grad(0);
                 for (std::size_t i = 0; i < g.size(); ++i)
                   gx[i] += g[i] * exponent * std::pow(X[i], exponent - 1.0);
               });
}

Var mean_rows(const Var& x) {
  require_matrix("mean_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (n == 0) throw ShapeError("mean_rows: empty input " + shape_to_string(x.shape()));
  const auto& xv = x.value().storage();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += xv[i * m + j];
  for (double& v : out) v /= static_cast<double>(n);
  return tape_of(x).record("mean_rows", Tensor({1, m}, std::move(out)), {x},
                           [n, m](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             auto gx = ctx.input_grad(0);
                             const double inv = 1.0 / static_cast<double>(n);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j] * inv;
                           });
}

Var row_sum(const Var& x) {
  require_matrix("row_sum", x);
  const std::size_t n = x.rows(), m = x.cols();
  const auto& xv = x.value().storage();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += xv[i * m + j];
  return tape_of(x).record("row_sum", Tensor({n, 1}, std::move(out)), {x},
                           [n, m](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             auto gx = ctx.input_grad(0);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i];
                           });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return tape_of(x).record("sum", Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    for (double& v : ctx.input_grad(0)) v += g;
  });
}

Var logsumexp(const Var& x) {
  const auto xv = x.value().values();
  if (xv.empty()) throw ShapeError("logsumexp: empty input " + shape_to_string(x.shape()));
  const double mx = *std::max_element(xv.begin(), xv.end());
  double z = 0.0;
  for (double v : xv) z += std::exp(v - mx);
  const double out = mx + std::log(z);
  return tape_of(x).record("logsumexp", Tensor::scalar(out), {x}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    const double y = ctx.output().item();
    const auto& X = ctx.input(0).storage();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < X.size(); ++i) gx[i] += g * std::exp(X[i] - y);
  });
}

Var scale(const Var& x, double c) {
  return unary("scale", x, [c](double v) { return c * v; }, [c](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

Var add_scalar(const Var& x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var transpose(const Var& x) {
  require_matrix("transpose", x);
  const std::size_t n = x.rows(), m = x.cols();
  return tape_of(x).record("transpose", x.value().transposed(), {x}, [n, m](BackwardContext& ctx) {
    const auto g = ctx.out_grad();
    auto gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j * n + i];
  });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.value().numel()) throw shape_error("reshape", x.shape(), shape);
  return tape_of(x).record("reshape", Tensor(std::move(shape), x.value().storage()), {x},
                           [](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             auto gx = ctx.input_grad(0);
                             for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                           });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  require_matrix("gather_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto& xv = x.value().storage();
  std::vector<double> out(idx.size() * m);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for shape " +
                       shape_to_string(x.shape()));
    }
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(idx[r] * m), m,
                out.begin() + static_cast<std::ptrdiff_t>(r * m));
  }
  const std::size_t k = idx.size();
  return tape_of(x).record("gather_rows", Tensor({k, m}, std::move(out)), {x},
                           [idx = std::move(idx), m](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             auto gx = ctx.input_grad(0);
                             for (std::size_t r = 0; r < idx.size(); ++r)
                               for (std::size_t j = 0; j < m; ++j) gx[idx[r] * m + j] += g[r * m + j];
                           });
}

Var select(const Var& x, std::span<const std::size_t> indices) {
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const auto& xv = x.value().storage();
  std::vector<double> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= xv.size()) {
      throw ShapeError("select: index " + std::to_string(idx[r]) + " out of range for shape " +
                       shape_to_string(x.shape()));
    }
    out[r] = xv[idx[r]];
  }
  const std::size_t k = idx.size();
  return tape_of(x).record("select", Tensor({k}, std::move(out)), {x},
                           [idx = std::move(idx)](BackwardContext& ctx) {
                             const auto g = ctx.out_grad();
                             auto gx = ctx.input_grad(0);
                             for (std::size_t r = 0; r < idx.size(); ++r) gx[idx[r]] += g[r];
                           });
}

// ---------------------------------------------------------------------------

double gradient_check(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("gradient_check: step must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    Var loss = f(tape, xv);
    if (!std::isfinite(loss.item())) throw std::runtime_error("gradient_check: non-finite loss");
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var xv = tape.constant(at);
    const double v = f(tape, xv).item();
    if (!std::isfinite(v)) throw std::runtime_error("gradient_check: non-finite loss");
    return v;
  };
  double worst = 0.0;
  Tensor probe(x.shape(), x.storage());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = eval(probe);
    probe[i] = orig - h;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    if (!std::isfinite(a)) throw std::runtime_error("gradient_check: non-finite gradient");
    worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(numeric)));
  }
  return worst;
}

}  // namespace protoalign
