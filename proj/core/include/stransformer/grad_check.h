#pragma once

#include <functional>

#include "stransformer/tensor.h"

namespace stf {

struct GradCheckOptions {
  double eps = 1e-5;        // central-difference step, must be in [1e-6, 1e-3]
  int max_coords = 0;       // 0 = check every coordinate
  uint64_t seed = 17;       // coordinate sampling
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
  std::string worst_coord;  // "param#idx" of the worst offender
};

// Compares the analytic gradient of a deterministic scalar function against
// central finite differences over (sampled) parameter coordinates.
// rel err = |analytic - cd| / max(|analytic|, |cd|, 1e-8).
GradCheckReport grad_check_report(const std::function<Tensor()>& f,
                                  const std::vector<Tensor>& params,
                                  const GradCheckOptions& opts = {});

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& opts = {});

}  // namespace stf
