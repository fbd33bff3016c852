// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Temporal neighborhoods: the flattened side-channel stream is split into one
// contiguous group per video frame with proportional floor boundaries, and
// every group is padded to a common width G = ceil(N / K) of key slots.

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace pave {

struct AlignmentPlan {
  std::size_t n_side_tokens = 0;  // N
  std::size_t n_frames = 0;       // K
  std::size_t group_size = 0;     // G
  /// Half-open [lo, hi) per frame.
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;
  std::vector<std::size_t> pad_counts;
  /// K x G slot validity, row-major.
  std::vector<std::uint8_t> mask;
  /// Frames whose neighborhood holds no side token at all.
  std::size_t empty_groups = 0;

  std::size_t group_length(std::size_t k) const { return boundaries[k].second - boundaries[k].first; }
};

/// Throws std::invalid_argument when n_frames == 0.
AlignmentPlan plan_alignment(std::size_t n_side_tokens, std::size_t n_frames);

struct Neighborhood {
  /// G slot entries: side-token index, or -1 for a padded slot.
  std::vector<std::ptrdiff_t> indices;
  std::vector<std::uint8_t> valid;
};

/// Throws std::out_of_range for k >= K.
Neighborhood neighborhood(std::size_t k, const AlignmentPlan& plan);

}  // namespace pave
