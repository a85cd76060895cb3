#include "stransformer/adam.h"

#include <cmath>

namespace stf {

double LrSchedule::rate_at(int64_t step) const {
  double t = static_cast<double>(step);
  double warm = warmup_steps > 0
                    ? std::min(1.0, t / static_cast<double>(warmup_steps))
                    : 1.0;
  double decay = decay_interval > 0
                     ? std::pow(decay_factor, t / static_cast<double>(decay_interval))
                     : 1.0;
  return base * warm * decay;
}

AdamState make_adam_state(const ParamStore& params, LrSchedule schedule,
                          double beta1, double beta2, double eps) {
  AdamState st;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  st.schedule = schedule;
  for (const auto& [name, t] : params.entries()) {
    st.m.emplace_back(t.numel(), 0.0);
    st.v.emplace_back(t.numel(), 0.0);
  }
  return st;
}

double adam_step(ParamStore& params, AdamState& state) {
  const auto& entries = params.entries();
  if (state.m.size() != entries.size()) {
    throw StructureError("adam_step: state was built for a different store");
  }
  state.step += 1;
  double lr = state.schedule.rate_at(state.step);
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < entries.size(); ++p) {
    const std::string& name = entries[p].first;
    Tensor t = entries[p].second;
    const auto& g = t.grad();
    if (g.empty()) continue;  // parameter untouched by this step's graph
    auto& data = t.mutable_data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < data.size(); ++i) {
      double gi = g[i];
      if (!std::isfinite(gi)) {
        throw DivergenceError("adam_step: non-finite gradient in parameter '" +
                              name + "'");
      }
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  return lr;
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params.entries()) {
    for (double g : t.grad()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (const auto& [name, t] : params.entries()) {
      for (auto& g : t.node()->grad) g *= s;
    }
  }
  return norm;
}

}  // namespace stf
