// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pave {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double eps, double denom_floor) {
  for (auto& p : params) p.zero_grad();
  loss_fn().backward();

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss_fn().item();
      values[i] = saved - eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
      result.max_abs_analytic = std::max(result.max_abs_analytic, std::abs(a));
      ++result.checked;
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace pave
