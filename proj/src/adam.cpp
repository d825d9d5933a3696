#include "istt/adam.hpp"

#include <cmath>

namespace istt {

double LrSchedule::lr(long step) const {
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup_steps);
  return scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

AdamState AdamState::init(const std::vector<Param*>& params) {
  AdamState st;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const Param* p : params) {
    st.first_moment.emplace_back(p->value.shape());
    st.second_moment.emplace_back(p->value.shape());
  }
  return st;
}

void adam_step(const std::vector<Param*>& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (params.size() != state.first_moment.size())
    throw ContractError("adam_step: state does not match parameter list");
  state.step_count += 1;
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    if (!m.same_shape(p.value))
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    double* pd = p.value.data();
    const double* gd = p.grad.data();
    double* md = m.data();
    double* vd = v.data();
    for (long j = 0; j < p.value.numel(); ++j) {
      md[j] = b1 * md[j] + (1.0 - b1) * gd[j];
      vd[j] = b2 * vd[j] + (1.0 - b2) * gd[j] * gd[j];
      double mhat = md[j] / bc1;
      double vhat = vd[j] / bc2;
      pd[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    check_finite(p.value, "adam_step");
  }
}

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace istt
