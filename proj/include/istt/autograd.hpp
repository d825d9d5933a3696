#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "istt/tensor.hpp"

namespace istt {

// A learnable parameter: value plus a gradient accumulator of the same shape.
// Gradients accumulate across a step's forward/backward passes and are zeroed
// by the optimizer between steps.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations append nodes in forward order; backward()
// walks them in exact reverse order, which is a reverse topological order
// because an op can only consume nodes that already exist.
class Tape {
 public:
  Var constant(Tensor value);               // leaf without gradient
  Var input(Tensor value);                  // leaf with gradient (tests, probes)
  Var param(Param& p);                      // leaf bound to an external accumulator

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Tensor& grad(Var v) const;          // valid after backward()
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }
  size_t size() const { return nodes_.size(); }
  void clear();

  // Computes d(loss)/d(node) for every node reachable from loss and flushes
  // parameter gradients into their Param accumulators. loss must be scalar.
  void backward(Var loss);

  // ---- differentiable ops ----
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);                    // same shape
  Var add_row_bias(Var x, Var bias);        // [m,n] + [n]
  Var add_scaled(Var a, Var b, double c);   // a + c*b
  Var mul(Var a, Var b);                    // elementwise
  Var scale(Var a, double c);
  Var relu(Var a);
  Var sum(Var a);                           // -> scalar
  Var softmax(Var a, int axis);
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  Var embedding(Var table, std::vector<int> ids);
  Var attention(Var q, Var k, Var v, AttnMask mask, int n_heads);
  // Inverted-scale dropout; pass the training RNG. No-op when rate == 0.
  Var dropout(Var x, double rate, std::mt19937_64& rng);
  // Sum over unmasked positions of -log softmax(logits)[i, target[i]].
  Var cross_entropy_sum(Var logits, std::vector<int> targets, std::vector<std::uint8_t> loss_mask);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward_fn;  // null for leaves/constants
  };

  int push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward_fn);
  Tensor& grad_buf(int id);
  void accumulate(int id, const Tensor& g);

  std::vector<Node> nodes_;

  friend struct TapeAccess;
};

}  // namespace istt
