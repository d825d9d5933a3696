#pragma once

#include <functional>
#include <random>
#include <vector>

#include "istt/autograd.hpp"
#include "istt/tensor.hpp"

namespace istt::testing {

// Builds a scalar loss on the given tape from leaf vars (one per input tensor).
using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_loss(const std::vector<Tensor>& inputs, const BuildFn& build) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.input(t));
  return tape.value(build(tape, leaves)).item();
}

inline std::vector<Tensor> analytic_grads(const std::vector<Tensor>& inputs, const BuildFn& build) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.input(t));
  Var loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& g = tape.grad(leaves[i]);
    grads.push_back(g.defined() ? g : Tensor(inputs[i].shape()));
  }
  return grads;
}

inline double rel_err(double a, double b) {
  double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

// Central finite differences against the tape gradient; returns the worst
// relative error over all elements of all inputs.
inline double fd_check(std::vector<Tensor> inputs, const BuildFn& build, double h = 1e-5) {
  std::vector<Tensor> grads = analytic_grads(inputs, build);
  double worst = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    for (long i = 0; i < inputs[t].numel(); ++i) {
      double orig = inputs[t].data()[i];
      inputs[t].data()[i] = orig + h;
      double up = eval_loss(inputs, build);
      inputs[t].data()[i] = orig - h;
      double down = eval_loss(inputs, build);
      inputs[t].data()[i] = orig;
      double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(grads[t].data()[i], fd));
    }
  }
  return worst;
}

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : t.vec()) v = dist(rng);
  return t;
}

}  // namespace istt::testing
