#pragma once

#include "stransformer/param_store.h"

namespace stf {

// lr(t) = base * min(1, t/warmup) * decay_factor^(t/decay_interval)
struct LrSchedule {
  double base = 1e-3;
  int64_t warmup_steps = 100;
  double decay_factor = 0.5;
  int64_t decay_interval = 3000;

  double rate_at(int64_t step) const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule;
  int64_t step = 0;
  // first/second moment buffers, parallel to the store's entry order
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const ParamStore& params, LrSchedule schedule,
                          double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8);

// Bias-corrected Adam update at the scheduled rate for the incremented step.
// Throws DivergenceError naming the parameter on a non-finite gradient.
// Returns the learning rate that was applied.
double adam_step(ParamStore& params, AdamState& state);

// Global-norm gradient clip; no-op when max_norm <= 0. Returns the norm.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace stf
