#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cmkd/error.hpp"

// Dense 64-bit tensors on an eager, single-use reverse-mode tape.
// Tensors are immutable after creation except for the grad buffer; a graph
// and everything it references belong to one worker. No implicit
// broadcasting except scalar-with-tensor.

namespace cmkd {

using Shape = std::vector<std::size_t>;

/// Values at or below this floor are clamped (log, row normalization) or
/// rejected (div).
inline constexpr double kStabilityFloor = 1e-12;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  bool consumed = false;  // op nodes are single-use; leaves never consume
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pull;  // accumulates self.grad into parents

  bool is_leaf() const { return !pull; }
  std::size_t numel() const { return values.size(); }
};

inline bool& grad_recording_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording in scope (evaluation / metric passes).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_recording_flag()) {
    detail::grad_recording_flag() = false;
  }
  ~NoGradGuard() { detail::grad_recording_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t(std::move(node));
    t.check_finite("tensor");
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({}, {v}, requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor vector(std::initializer_list<double> v, bool requires_grad = false) {
    return from_data({v.size()}, std::vector<double>(v), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("matrix: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return from_data({r, c}, std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_ref().shape; }
  std::size_t rank() const { return node_ref().shape.size(); }
  std::size_t numel() const { return node_ref().numel(); }

  std::size_t rows() const {
    require_rank(2, "rows");
    return node_ref().shape[0];
  }
  std::size_t cols() const {
    require_rank(2, "cols");
    return node_ref().shape[1];
  }
  std::size_t dim(std::size_t i) const { return node_ref().shape.at(i); }

  bool is_scalar() const { return numel() == 1; }

  double value() const {
    if (!is_scalar()) throw ShapeError("value: tensor " + shape_str(shape()) + " is not scalar");
    return node_ref().values[0];
  }
  double at(std::size_t i) const { return node_ref().values.at(i); }
  double at(std::size_t r, std::size_t c) const {
    require_rank(2, "at");
    return node_ref().values.at(r * node_ref().shape[1] + c);
  }

  std::span<const double> values() const {
    const auto& n = node_ref();
    return {n.values.data(), n.values.size()};
  }

  bool requires_grad() const { return node_ref().requires_grad; }
  bool has_grad() const { return defined() && !node_->grad.empty(); }

  std::span<const double> grad() const {
    const auto& n = node_ref();
    if (n.grad.empty()) throw TapeError("grad: no gradient populated (run backward first)");
    return {n.grad.data(), n.grad.size()};
  }

  /// Copy of the values buffer.
  std::vector<double> to_vector() const {
    const auto& n = node_ref();
    return n.values;
  }

  /// Same values, detached from any graph, requires_grad off.
  Tensor detached() const { return from_data(shape(), to_vector(), false); }

  // -- internal plumbing (ops and backward) --
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  void check_finite(const char* op) const {
    for (double v : node_ref().values) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string(op) + ": non-finite value produced");
      }
    }
  }

 private:
  detail::Node& node_ref() {
    if (!node_) throw TapeError("use of undefined tensor");
    return *node_;
  }
  const detail::Node& node_ref() const {
    if (!node_) throw TapeError("use of undefined tensor");
    return *node_;
  }
  void require_rank(std::size_t r, const char* what) const {
    if (rank() != r) {
      throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                       shape_str(shape()));
    }
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline const std::shared_ptr<Node>& expect(const Tensor& t, const char* op) {
  if (!t.defined()) throw TapeError(std::string(op) + ": undefined operand");
  return t.node();
}

/// Builds an op node. Records parents + pull only when some operand requires
/// grad and recording is on.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                      std::vector<std::shared_ptr<Node>> parents,
                      std::function<void(Node&)> pull) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool want_grad = false;
  for (const auto& p : parents) want_grad = want_grad || p->requires_grad;
  if (want_grad && grad_recording_flag()) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->pull = std::move(pull);
  }
  Tensor t(std::move(node));
  t.check_finite(op);
  return t;
}

inline void accumulate(Node& p, std::size_t i, double v) {
  if (p.requires_grad) p.grad[i] += v;
}

enum class Bcast { none, left_scalar, right_scalar };

inline Bcast binary_mode(const Node& a, const Node& b, const char* op) {
  if (a.shape == b.shape) return Bcast::none;
  if (b.numel() == 1) return Bcast::right_scalar;
  if (a.numel() == 1) return Bcast::left_scalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                   shape_str(b.shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Reverse pass from a scalar loss. Populates grad on every requires_grad
/// leaf reachable from it and consumes the recorded op nodes; repeating the
/// pass without a fresh forward is rejected.
inline void backward(const Tensor& loss) {
  const auto& root = detail::expect(loss, "backward");
  if (root->numel() != 1) {
    throw TapeError("backward: loss must be scalar, got " + shape_str(root->shape));
  }
  if (!root->requires_grad) {
    throw TapeError("backward: loss does not depend on any requires_grad leaf");
  }

  // Post-order over parents: ancestors precede dependents.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* n;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  visited.insert(root.get());
  stack.push_back({root.get()});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.n->consumed) throw TapeError("backward: stale tape (needs a new forward pass)");
    if (f.next < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next++].get();
      if (visited.insert(p).second) stack.push_back({p});
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : topo) {
    if (n->requires_grad) n->grad.assign(n->numel(), 0.0);
  }
  root->grad.assign(1, 1.0);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (n->pull) {
      n->pull(*n);
      n->consumed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise binary primitives
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Pull>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Pull pull) {
  const auto an = expect(a, name);
  const auto bn = expect(b, name);
  const Bcast mode = binary_mode(*an, *bn, name);
  const Shape& out_shape = (mode == Bcast::left_scalar) ? bn->shape : an->shape;
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = an->values[mode == Bcast::left_scalar ? 0 : i];
    const double bv = bn->values[mode == Bcast::right_scalar ? 0 : i];
    out[i] = fwd(av, bv);
  }
  return make_op(name, out_shape, std::move(out), {an, bn},
                 [an, bn, mode, pull](Node& self) {
                   const std::size_t n = self.numel();
                   for (std::size_t i = 0; i < n; ++i) {
                     const std::size_t ia = (mode == Bcast::left_scalar) ? 0 : i;
                     const std::size_t ib = (mode == Bcast::right_scalar) ? 0 : i;
                     const double g = self.grad[i];
                     const double av = an->values[ia];
                     const double bv = bn->values[ib];
                     auto [da, db] = pull(g, av, bv);
                     accumulate(*an, ia, da);
                     accumulate(*bn, ib, db);
                   }
                 });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return std::pair<double, double>{g, g}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return std::pair<double, double>{g, -g}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y) { return std::pair<double, double>{g * y, g * x}; });
}

/// Elementwise division. Divisor entries at or below the stability floor in
/// magnitude are an error, never a silent clamp.
inline Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : detail::expect(b, "div")->values) {
    if (std::abs(v) <= kStabilityFloor) {
      throw NumericError("div: divisor at or below stability floor");
    }
  }
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double x, double y) {
        return std::pair<double, double>{g / y, -g * x / (y * y)};
      });
}

// ---------------------------------------------------------------------------
// elementwise unary primitives
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Pull>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Pull pull) {
  const auto xn = expect(x, name);
  const std::size_t n = xn->numel();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xn->values[i]);
  return make_op(name, xn->shape, std::move(out), {xn}, [xn, pull](Node& self) {
    for (std::size_t i = 0; i < self.numel(); ++i) {
      accumulate(*xn, i, pull(self.grad[i], xn->values[i], self.values[i]));
    }
  });
}

}  // namespace detail

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

/// log(max(x, floor)); below the floor the clamp makes the local gradient 0.
inline Tensor log(const Tensor& x) {
  return detail::unary_op(
      "log", x, [](double v) { return std::log(std::max(v, kStabilityFloor)); },
      [](double g, double v, double) { return v > kStabilityFloor ? g / v : 0.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double g, double, double y) { return g * (1.0 - y * y); });
}

inline Tensor clamp_max(const Tensor& x, double hi) {
  return detail::unary_op(
      "clamp_max", x, [hi](double v) { return v < hi ? v : hi; },
      [hi](double g, double v, double) { return v < hi ? g : 0.0; });
}

/// Multiplication by a plain constant (no extra graph node for the scalar).
inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      "scale", x, [c](double v) { return c * v; }, [c](double g, double, double) { return g * c; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  const auto xn = detail::expect(x, "sum");
  double s = 0.0;
  for (double v : xn->values) s += v;
  return detail::make_op("sum", {}, {s}, {xn}, [xn](detail::Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < xn->numel(); ++i) detail::accumulate(*xn, i, g);
  });
}

inline Tensor mean(const Tensor& x) {
  const auto xn = detail::expect(x, "mean");
  const std::size_t n = xn->numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : xn->values) s += v;
  const double inv = 1.0 / static_cast<double>(n);
  return detail::make_op("mean", {}, {s * inv}, {xn}, [xn, inv](detail::Node& self) {
    const double g = self.grad[0] * inv;
    for (std::size_t i = 0; i < xn->numel(); ++i) detail::accumulate(*xn, i, g);
  });
}

/// Row sums of a matrix -> vector of length rows.
inline Tensor sum_rows(const Tensor& x) {
  const auto xn = detail::expect(x, "sum_rows");
  if (xn->shape.size() != 2) throw ShapeError("sum_rows: expected matrix, got " + shape_str(xn->shape));
  const std::size_t r = xn->shape[0], c = xn->shape[1];
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += xn->values[i * c + j];
  return detail::make_op("sum_rows", {r}, std::move(out), {xn}, [xn, r, c](detail::Node& self) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) detail::accumulate(*xn, i * c + j, self.grad[i]);
  });
}

// ---------------------------------------------------------------------------
// matrix primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto an = detail::expect(a, "matmul");
  const auto bn = detail::expect(b, "matmul");
  if (an->shape.size() != 2 || bn->shape.size() != 2 || an->shape[1] != bn->shape[0]) {
    throw ShapeError("matmul: shapes " + shape_str(an->shape) + " and " + shape_str(bn->shape) +
                     " do not conform");
  }
  const std::size_t n = an->shape[0], k = an->shape[1], m = bn->shape[1];
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = an->values[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = &bn->values[kk * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_op("matmul", {n, m}, std::move(out), {an, bn},
                         [an, bn, n, k, m](detail::Node& self) {
                           // dA = G * B^T, dB = A^T * G
                           if (an->requires_grad) {
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t kk = 0; kk < k; ++kk) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < m; ++j)
                                   s += self.grad[i * m + j] * bn->values[kk * m + j];
                                 an->grad[i * k + kk] += s;
                               }
                           }
                           if (bn->requires_grad) {
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t kk = 0; kk < k; ++kk) {
                                 const double av = an->values[i * k + kk];
                                 if (av == 0.0) continue;
                                 for (std::size_t j = 0; j < m; ++j)
                                   bn->grad[kk * m + j] += av * self.grad[i * m + j];
                               }
                           }
                         });
}

inline Tensor transpose(const Tensor& x) {
  const auto xn = detail::expect(x, "transpose");
  if (xn->shape.size() != 2) throw ShapeError("transpose: expected matrix");
  const std::size_t r = xn->shape[0], c = xn->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xn->values[i * c + j];
  return detail::make_op("transpose", {c, r}, std::move(out), {xn}, [xn, r, c](detail::Node& self) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) detail::accumulate(*xn, i * c + j, self.grad[j * r + i]);
  });
}

/// Adds a length-c vector to every row of an n-by-c matrix (bias add).
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  const auto mn = detail::expect(m, "add_rowvec");
  const auto vn = detail::expect(v, "add_rowvec");
  if (mn->shape.size() != 2 || vn->shape.size() != 1 || vn->shape[0] != mn->shape[1]) {
    throw ShapeError("add_rowvec: shapes " + shape_str(mn->shape) + " and " + shape_str(vn->shape) +
                     " do not conform");
  }
  const std::size_t r = mn->shape[0], c = mn->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = mn->values[i * c + j] + vn->values[j];
  return detail::make_op("add_rowvec", {r, c}, std::move(out), {mn, vn},
                         [mn, vn, r, c](detail::Node& self) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) {
                               const double g = self.grad[i * c + j];
                               detail::accumulate(*mn, i * c + j, g);
                               detail::accumulate(*vn, j, g);
                             }
                         });
}

/// Each row divided by max(L2 norm, floor).
inline Tensor row_l2_normalize(const Tensor& x) {
  const auto xn = detail::expect(x, "row_l2_normalize");
  if (xn->shape.size() != 2) throw ShapeError("row_l2_normalize: expected matrix");
  const std::size_t r = xn->shape[0], c = xn->shape[1];
  std::vector<double> out(r * c);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = xn->values[i * c + j];
      s += v * v;
    }
    norms[i] = std::sqrt(s);
    const double den = std::max(norms[i], kStabilityFloor);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xn->values[i * c + j] / den;
  }
  return detail::make_op(
      "row_l2_normalize", {r, c}, std::move(out), {xn},
      [xn, norms, r, c](detail::Node& self) {
        for (std::size_t i = 0; i < r; ++i) {
          if (norms[i] > kStabilityFloor) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j)
              dot += self.grad[i * c + j] * self.values[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
              const double dy = (self.grad[i * c + j] - self.values[i * c + j] * dot) / norms[i];
              detail::accumulate(*xn, i * c + j, dy);
            }
          } else {
            // clamped denominator is a constant
            for (std::size_t j = 0; j < c; ++j)
              detail::accumulate(*xn, i * c + j, self.grad[i * c + j] / kStabilityFloor);
          }
        }
      });
}

/// Row-wise softmax with max subtraction; rows sum to 1 and stay positive.
inline Tensor softmax_rows(const Tensor& x) {
  const auto xn = detail::expect(x, "softmax_rows");
  if (xn->shape.size() != 2) throw ShapeError("softmax_rows: expected matrix");
  const std::size_t r = xn->shape[0], c = xn->shape[1];
  if (c == 0) throw ShapeError("softmax_rows: empty rows");
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = xn->values[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xn->values[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(xn->values[i * c + j] - mx);
      s += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return detail::make_op("softmax_rows", {r, c}, std::move(out), {xn},
                         [xn, r, c](detail::Node& self) {
                           for (std::size_t i = 0; i < r; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < c; ++j)
                               dot += self.grad[i * c + j] * self.values[i * c + j];
                             for (std::size_t j = 0; j < c; ++j) {
                               const double y = self.values[i * c + j];
                               detail::accumulate(*xn, i * c + j, y * (self.grad[i * c + j] - dot));
                             }
                           }
                         });
}

/// Diagonal of a square matrix -> vector.
inline Tensor gather_diagonal(const Tensor& x) {
  const auto xn = detail::expect(x, "gather_diagonal");
  if (xn->shape.size() != 2 || xn->shape[0] != xn->shape[1]) {
    throw ShapeError("gather_diagonal: expected square matrix, got " + shape_str(xn->shape));
  }
  const std::size_t n = xn->shape[0];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xn->values[i * n + i];
  return detail::make_op("gather_diagonal", {n}, std::move(out), {xn}, [xn, n](detail::Node& self) {
    for (std::size_t i = 0; i < n; ++i) detail::accumulate(*xn, i * n + i, self.grad[i]);
  });
}

/// Concatenation of two matrices along axis 0 (rows) or 1 (columns).
inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  const auto an = detail::expect(a, "concat");
  const auto bn = detail::expect(b, "concat");
  if (an->shape.size() != 2 || bn->shape.size() != 2) throw ShapeError("concat: expected matrices");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  const std::size_t other = 1 - axis;
  if (an->shape[other] != bn->shape[other]) {
    throw ShapeError("concat: shapes " + shape_str(an->shape) + " and " + shape_str(bn->shape) +
                     " do not conform along axis " + std::to_string(axis));
  }
  Shape out_shape = an->shape;
  out_shape[axis] += bn->shape[axis];
  const std::size_t r = out_shape[0], c = out_shape[1];
  const std::size_t ac = an->shape[1], ar = an->shape[0];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (axis == 0) {
        out[i * c + j] = (i < ar) ? an->values[i * c + j] : bn->values[(i - ar) * c + j];
      } else {
        out[i * c + j] = (j < ac) ? an->values[i * ac + j] : bn->values[i * (c - ac) + (j - ac)];
      }
    }
  return detail::make_op("concat", out_shape, std::move(out), {an, bn},
                         [an, bn, axis, r, c, ar, ac](detail::Node& self) {
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) {
                               const double g = self.grad[i * c + j];
                               if (axis == 0) {
                                 if (i < ar)
                                   detail::accumulate(*an, i * c + j, g);
                                 else
                                   detail::accumulate(*bn, (i - ar) * c + j, g);
                               } else {
                                 if (j < ac)
                                   detail::accumulate(*an, i * ac + j, g);
                                 else
                                   detail::accumulate(*bn, i * (c - ac) + (j - ac), g);
                               }
                             }
                         });
}

/// Contiguous block [r0, r1) x [c0, c1) of a matrix.
inline Tensor slice(const Tensor& x, std::size_t r0, std::size_t r1, std::size_t c0,
                    std::size_t c1) {
  const auto xn = detail::expect(x, "slice");
  if (xn->shape.size() != 2) throw ShapeError("slice: expected matrix");
  const std::size_t r = xn->shape[0], c = xn->shape[1];
  if (r0 >= r1 || r1 > r || c0 >= c1 || c1 > c) {
    throw ShapeError("slice: range out of bounds for " + shape_str(xn->shape));
  }
  const std::size_t nr = r1 - r0, nc = c1 - c0;
  std::vector<double> out(nr * nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) out[i * nc + j] = xn->values[(r0 + i) * c + (c0 + j)];
  return detail::make_op("slice", {nr, nc}, std::move(out), {xn},
                         [xn, r0, c0, nr, nc, c](detail::Node& self) {
                           for (std::size_t i = 0; i < nr; ++i)
                             for (std::size_t j = 0; j < nc; ++j)
                               detail::accumulate(*xn, (r0 + i) * c + (c0 + j),
                                                  self.grad[i * nc + j]);
                         });
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  return slice(x, r0, r1, 0, x.cols());
}

}  // namespace cmkd
