#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wenlex {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised whenever an engine operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Shared handle to a dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) : p_(std::make_shared<TensorImpl>()) {
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (numel_of(shape) != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    }
    p_->shape = std::move(shape);
    p_->data = std::move(data);
    p_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t rank() const { return p_->shape.size(); }
  std::size_t dim(std::size_t i) const { return p_->shape.at(i); }
  std::size_t numel() const { return p_->data.size(); }

  std::span<const double> data() const { return p_->data; }
  std::span<double> mutable_data() { return p_->data; }
  const std::vector<double>& vec() const { return p_->data; }

  bool has_grad() const { return !p_->grad.empty(); }
  std::span<const double> grad() const { return p_->grad; }
  std::span<double> mutable_grad() {
    ensure_grad();
    return p_->grad;
  }
  void ensure_grad() {
    if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
  }
  void zero_grad() { p_->grad.clear(); }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return p_->data[0];
  }
  double operator[](std::size_t i) const { return p_->data[i]; }

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool v) { p_->requires_grad = v; }
  bool is_leaf() const { return p_->is_leaf; }

  /// Copy of the values with no tape history.
  Tensor detach() const { return Tensor(p_->shape, p_->data, false); }

  TensorImpl* impl() const { return p_.get(); }
  bool same(const Tensor& o) const { return p_ == o.p_; }

 private:
  std::shared_ptr<TensorImpl> p_;
};

/// One recorded operation. `backward` accumulates raw gradients into the
/// inputs; `backward_graph`, when present, expresses the same vector-Jacobian
/// product with tape operations so the result can itself be differentiated.
struct TapeNode {
  std::string op;
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void(std::span<const double> gout)> backward;
  std::function<std::vector<Tensor>(const Tensor& gout, const std::vector<bool>& needed)> backward_graph;
};

/// Append-only record of operations. A tape belongs to one thread; the
/// active tape is thread-local and installed with Tape::Scope.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_ref()) { current_ref() = &t; }
    ~Scope() { current_ref() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return current_ref(); }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }
  void clear() { nodes_.clear(); }

  void record(TapeNode n) { nodes_.push_back(std::move(n)); }

  /// Reverse sweep from a scalar output. Leaf gradients accumulate; gradients
  /// of intermediate tensors are reset first so a tape can be swept again.
  void backward(Tensor out) {
    if (out.numel() != 1) throw ShapeError("backward() requires a scalar output, got " + shape_str(out.shape()));
    for (auto& n : nodes_) n.output.zero_grad();
    out.ensure_grad();
    out.mutable_grad()[0] += 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      TapeNode& n = nodes_[i];
      if (!n.output.has_grad()) continue;
      n.backward(n.output.grad());
    }
  }

  /// Gradient of scalar `out` with respect to `input`, returned as a tape
  /// tensor so that functions of it can be backpropagated (double backward).
  Tensor grad_of(const Tensor& out, const Tensor& input);

 private:
  static Tape*& current_ref() {
    thread_local Tape* t = nullptr;
    return t;
  }
  std::vector<TapeNode> nodes_;
};

namespace detail {

inline void check_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

using BackwardFn = std::function<void(std::span<const double>)>;
using GraphBackwardFn = std::function<std::vector<Tensor>(const Tensor&, const std::vector<bool>&)>;

/// Wraps raw output values into a tensor and records it on the active tape
/// when any input participates in differentiation.
inline Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          BackwardFn bw, GraphBackwardFn gbw = {}) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  out.impl()->is_leaf = false;
  tape->record(TapeNode{op, std::move(inputs), out, std::move(bw), std::move(gbw)});
  return out;
}

/// Adds `g` into the gradient of `t` if it takes part in differentiation.
inline void accumulate(Tensor t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

}  // namespace wenlex
