#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <deque>
#include <vector>

#include "dattn/tensor.hpp"

namespace dattn {

class Graph;

/// Handle to a value recorded in a Graph. Cheap to copy; valid while the
/// owning Graph is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  // Entries are null for inputs that need no gradient. Implementations
  // accumulate (+=); an input listed twice receives both contributions.
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Single-owner reverse-mode tape. Values are appended in evaluation order,
/// so the tape is already topologically sorted and the backward pass is a
/// single reverse sweep that visits each reachable node once.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Appends a primitive. `backward` may be empty when no input needs a
  /// gradient. Throws NumericError when `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradients of the scalar `output` with respect to each entry of `wrt`,
  /// which must be leaves of this graph. Unreachable leaves get zeros.
  std::vector<Tensor> gradients(Var output, std::span<const Var> wrt) const;
  Tensor grad(Var output, Var wrt) const;

 private:
  struct Node {
    const char* op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    bool is_leaf;
  };

  void check_owned(Var v, const char* op) const;

  // deque keeps value() references valid while later ops are recorded.
  std::deque<Node> nodes_;
};

// Primitive set. Every op checks shapes, records itself on the operands'
// graph and rejects non-finite results.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (m x n) plus a 1 x n row broadcast over all rows.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// Multiplies every element of `a` by the 1x1 value `s`.
Var scale(Var a, Var s);
Var shift(Var a, double c);
Var hadamard(Var a, Var b);
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var a);
Var relu(Var a);
Var tanh(Var a);
Var clamp_min(Var a, double floor);
Var sum(Var a);
/// Frobenius inner product <a, b>.
Var inner(Var a, Var b);
Var concat_rows(Var top, Var bottom);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, Shape shape);
Var element(Var a, std::size_t flat_index);
/// Splits a C x H x W image into row-major p x p patches, one per row,
/// each flattened channel-major: (H/p)(W/p) x (C p p).
Var patchify(Var image, std::size_t patch);
/// Softmax cross-entropy of a logit vector against a class index.
Var cross_entropy(Var logits, std::size_t label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Tensor patchify(const Tensor& image, std::size_t patch);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace dattn
