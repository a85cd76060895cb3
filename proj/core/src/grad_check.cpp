#include "stransformer/grad_check.h"

#include <algorithm>
#include <cmath>

namespace stf {

GradCheckReport grad_check_report(const std::function<Tensor()>& f,
                                  const std::vector<Tensor>& params,
                                  const GradCheckOptions& opts) {
  if (opts.eps < 1e-6 || opts.eps > 1e-3) {
    throw ValueError("grad_check: eps must be in [1e-6, 1e-3]");
  }

  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    const auto& g = p.grad();
    analytic.push_back(g.empty() ? std::vector<double>(p.numel(), 0.0) : g);
  }

  // flat coordinate list (param index, element index)
  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (int64_t i = 0; i < params[pi].numel(); ++i) coords.emplace_back(pi, i);
  }
  if (opts.max_coords > 0 &&
      coords.size() > static_cast<size_t>(opts.max_coords)) {
    // seeded partial Fisher-Yates, keep the first max_coords
    Rng rng(opts.seed);
    for (int k = 0; k < opts.max_coords; ++k) {
      int64_t j = k + rng.uniform_int(static_cast<int64_t>(coords.size()) - k);
      std::swap(coords[k], coords[j]);
    }
    coords.resize(opts.max_coords);
  }

  GradCheckReport rep;
  for (auto [pi, i] : coords) {
    Tensor p = params[pi];
    auto& data = p.mutable_data();
    double saved = data[i];
    data[i] = saved + opts.eps;
    double up = f().item();
    data[i] = saved - opts.eps;
    double down = f().item();
    data[i] = saved;
    double cd = (up - down) / (2.0 * opts.eps);
    double an = analytic[pi][i];
    double denom = std::max({std::fabs(an), std::fabs(cd), 1e-8});
    double rel = std::fabs(an - cd) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = "param" + std::to_string(pi) + "#" + std::to_string(i);
    }
    ++rep.coords_checked;
  }
  return rep;
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params,
                  const GradCheckOptions& opts) {
  return grad_check_report(f, params, opts).max_rel_err;
}

}  // namespace stf
