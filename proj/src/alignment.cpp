// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/alignment.hpp"

#include <stdexcept>
#include <string>

namespace pave {

AlignmentPlan plan_alignment(std::size_t n_side_tokens, std::size_t n_frames) {
  if (n_frames == 0) throw std::invalid_argument("plan_alignment: need at least one frame");
  AlignmentPlan plan;
  plan.n_side_tokens = n_side_tokens;
  plan.n_frames = n_frames;
  plan.group_size = (n_side_tokens + n_frames - 1) / n_frames;
  plan.boundaries.reserve(n_frames);
  plan.pad_counts.reserve(n_frames);
  plan.mask.assign(n_frames * plan.group_size, 0);
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t lo = k * n_side_tokens / n_frames;
    const std::size_t hi = (k + 1) * n_side_tokens / n_frames;
    plan.boundaries.emplace_back(lo, hi);
    plan.pad_counts.push_back(plan.group_size - (hi - lo));
    for (std::size_t i = 0; i < hi - lo; ++i) plan.mask[k * plan.group_size + i] = 1;
    if (hi == lo) ++plan.empty_groups;
  }
  return plan;
}

Neighborhood neighborhood(std::size_t k, const AlignmentPlan& plan) {
  if (k >= plan.n_frames) {
    throw std::out_of_range("neighborhood: frame " + std::to_string(k) + " outside [0, " +
                            std::to_string(plan.n_frames) + ")");
  }
  Neighborhood n;
  const auto [lo, hi] = plan.boundaries[k];
  n.indices.assign(plan.group_size, -1);
  n.valid.assign(plan.group_size, 0);
  for (std::size_t i = 0; i < hi - lo; ++i) {
    n.indices[i] = static_cast<std::ptrdiff_t>(lo + i);
    n.valid[i] = 1;
  }
  return n;
}

}  // namespace pave
