// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>

#include "pave/tensor.hpp"

namespace pave {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  std::size_t checked = 0;
  /// Location and values of the element with the largest relative error.
  std::size_t worst_param = 0, worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

/// Compares the analytic gradient of `loss_fn` with central finite
/// differences, element by element over every tensor in `params`.
/// Relative error uses max(|analytic|, |numeric|, denom_floor) as denominator.
/// Existing gradients on `params` are cleared.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double eps = 1e-5, double denom_floor = 1e-8);

}  // namespace pave
