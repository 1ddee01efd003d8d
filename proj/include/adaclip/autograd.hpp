#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "adaclip/tensor.hpp"

// Reverse-mode differentiation over dense tensors. A forward pass builds a
// graph of Nodes; backward() walks it in reverse topological order and
// accumulates into the gradients of trainable Parameters it reaches.
namespace adaclip::ag {

struct Node;

// Receives the op's output value and gradient, the input values, and one
// gradient slot per input (nullptr when that input needs no gradient).
using BackwardFn = std::function<void(const Tensor& out_value, const Tensor& out_grad,
                                      std::span<const Tensor* const> in_values,
                                      std::span<Tensor* const> in_grads)>;

struct Node {
  Tensor owned;
  const Tensor* external = nullptr;  // set for parameter leaves
  Parameter* param = nullptr;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  const Tensor& value() const { return external ? *external : owned; }
  Tensor& grad();
  bool has_grad() const { return grad_allocated_; }
  void clear_grad() {
    grad_ = Tensor();
    grad_allocated_ = false;
  }

 private:
  Tensor grad_;
  bool grad_allocated_ = false;
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  // Leaf bound to `p`; requires a gradient iff p.trainable. The parameter
  // must outlive the graph.
  static Var parameter(Parameter& p);
  // Non-owning, gradient-free view of a tensor that outlives the graph.
  static Var view(const Tensor& t);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  std::shared_ptr<Node> node_;
};

// Builds a graph node. `fn` is dropped when no input requires a gradient.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn fn);

// Accumulates d(loss)/d(param) into every trainable Parameter reachable from
// the scalar `loss`. Repeated calls accumulate.
void backward(const Var& loss);

// --- kernels -------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_n(const std::vector<Var>& xs);
Var mean_n(const std::vector<Var>& xs);

// (m x k) . (k x n)
Var matmul(const Var& a, const Var& b);
// (m x k) . (n x k)^T
Var matmul_nt(const Var& a, const Var& b);
// Adds a length-n bias to every row of an (m x n) matrix.
Var add_bias(const Var& x, const Var& bias);
// x . w + b for x (m x in), w (in x out), b (out). `b` may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);
// Row softmax over allowed entries; `allowed` is row-major (m x n) with
// nonzero meaning visible, or null for no masking. Every row needs at least
// one allowed entry.
Var masked_softmax_rows(const Var& x, std::shared_ptr<const std::vector<unsigned char>> allowed);

Var reshape(const Var& x, Shape shape);
Var concat_rows(const std::vector<Var>& xs);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& x, std::size_t begin, std::size_t count);
// Mean of the listed rows of an (m x n) matrix, as a length-n vector.
Var gather_mean_rows(const Var& x, std::span<const std::size_t> rows);

// Cosine similarity of every row of x (m x d) with v (d), clamped to [-1, 1].
Var cosine_rows(const Var& x, const Var& v);
// Scalar cosine similarity of two vectors.
Var cosine(const Var& u, const Var& v);
// Elementwise exp(a) / (exp(a) + exp(b)).
Var pair_prob(const Var& a, const Var& b);
Var bilinear_resize(const Var& grid, std::size_t out_h, std::size_t out_w);

Var sum(const Var& x);
Var mean(const Var& x);

}  // namespace adaclip::ag
