#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "repr_robust/tensor.hpp"

namespace repr_robust {

class Graph;

// Handle to a value recorded on a Graph. Cheap to copy; only valid while
// its graph is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Graph& graph() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamic reverse-mode tape for one forward pass. Nodes are appended in
// evaluation order, so ids are a topological order. A graph is confined to
// one thread.
class Graph {
 public:
  // Accumulates the node's contribution into each input gradient. Entries of
  // `input_grads` are null for inputs that do not require a gradient.
  using BackwardFn = std::function<void(const Tensor& out_grad, const Tensor& out_value,
                                        std::span<const Tensor* const> input_values,
                                        std::span<Tensor* const> input_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable input.
  Var leaf(Tensor value);
  // Input treated as constant under differentiation.
  Var constant(Tensor value);

  // Appends a primitive's output. `fn` may be empty for non-differentiable ops.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  // Fills grad(v) = d root / d v for every node reachable from root.
  // Throws GraphError for a foreign or non-scalar root.
  void backward(const Var& root);

  // Gradient from the last backward(); zeros if nothing flowed into v.
  Tensor grad(const Var& v) const;

  bool requires_grad(const Var& v) const;
  bool is_leaf(const Var& v) const;
  bool owns(const Var& v) const noexcept;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until reached by backward
    bool requires_grad = false;
    bool leaf = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  void check_owned(const Var& v, const char* what) const;

  std::deque<Node> nodes_;
};

// d root / d leaf. Throws GraphError if `leaf` is not a differentiable leaf
// of the same graph as root.
Tensor gradient(const Var& root, const Var& leaf);

// --- primitives ----------------------------------------------------------
// Elementwise binary ops accept equal shapes or a one-element operand.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var neg(const Var& a);

Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n]
Var transpose(const Var& a);             // 2-D

// x: [n, c, h, w], weight: [o, c, k, k] with odd k, bias: [o].
// Stride 1 with zero padding k/2, so spatial size is preserved.
Var conv2d(const Var& x, const Var& weight, const Var& bias);
// 2x2 average pooling over [n, c, h, w]; h and w must be even.
Var avg_pool2(const Var& x);

Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
// Derivative at 0 is taken as 0 so distances have a zero subgradient there.
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);  // subgradient sign(x), 0 at 0

Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);  // 1-D operands

Var softmax(const Var& a);      // over the last axis
Var log_softmax(const Var& a);  // over the last axis

Var concat(const std::vector<Var>& parts, std::size_t axis = 0);
Var detach(const Var& a);
Var reshape(const Var& a, Shape shape);

Var add_bias(const Var& a, const Var& bias);  // [n, d] + [d]
Var row_sum(const Var& a);                    // [n, d] -> [n]
Var row_dot(const Var& a, const Var& b);      // [n, d] . [n, d] -> [n]
Var row_max(const Var& a);                    // [n, d] -> [n], first maximum wins
Var normalize_rows(const Var& a);             // unit L2 rows; zero rows throw
Var pick(const Var& a, std::vector<std::size_t> columns);  // [n, m] -> [n]
Var roll_rows(const Var& a, std::ptrdiff_t shift);          // out[i] = a[i - shift]
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

// --- finite differences --------------------------------------------------

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-12)
// for a scalar-valued map. `fn` builds its graph from the given leaf.
double finite_difference_check(const std::function<Var(Graph&, const Var&)>& fn,
                               const Tensor& x, double step);

}  // namespace repr_robust
