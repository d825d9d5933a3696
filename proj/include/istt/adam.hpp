#pragma once

#include <vector>

#include "istt/autograd.hpp"

namespace istt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

// Inverse-square-root warmup schedule keyed to the model width:
//   lr(step) = scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
struct LrSchedule {
  int d_model = 64;
  int warmup_steps = 400;
  double scale = 1.0;

  double lr(long step) const;
};

// Per-parameter first/second moments; step_count increments once per update.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step_count = 0;

  static AdamState init(const std::vector<Param*>& params);
};

// One bias-corrected Adam update over params using their accumulated grads.
// Gradients are left untouched; call zero_grads() before the next step.
void adam_step(const std::vector<Param*>& params, AdamState& state, double lr,
               const AdamConfig& cfg);

void zero_grads(const std::vector<Param*>& params);

}  // namespace istt
