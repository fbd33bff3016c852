// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Rotary positional embeddings for the fusion cross-attention, in a 1-D
// temporal variant and a factorized temporal/height/width variant.

#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pave/tensor.hpp"

namespace pave {

enum class RopeMode { Temporal1D, Spatiotemporal3D };

struct RopeSpec {
  RopeMode mode = RopeMode::Temporal1D;
  std::size_t head_dim = 0;
  double base = 10000.0;
  /// Lane widths (temporal, height, width); used in 3-D mode only.
  std::array<std::size_t, 3> axis_split{};

  static RopeSpec temporal(std::size_t head_dim, double base = 10000.0);
  /// 3-D spec with default_axis_split(head_dim).
  static RopeSpec spatiotemporal(std::size_t head_dim, double base = 10000.0);

  /// Throws ConfigError on odd widths or a split that does not cover head_dim.
  void validate() const;
};

/// Equal thirds rounded down to even lanes; the remainder goes to time.
std::array<std::size_t, 3> default_axis_split(std::size_t head_dim);

struct TokenPosition {
  double t = 0.0;
  std::optional<double> h;
  std::optional<double> w;
};

/// Angle table for rotate_pairs. Throws ConfigError when 3-D mode meets a
/// position without spatial coordinates.
std::shared_ptr<const RotationTable> rope_table(std::span<const TokenPosition> positions,
                                                const RopeSpec& spec);

/// Rotates x[n_tokens, heads * head_dim]; every head shares the token's angles.
Tensor apply_rope(const Tensor& x, std::span<const TokenPosition> positions, const RopeSpec& spec,
                  std::size_t heads = 1);

/// Max over (m, n) of |<rope(q_m), rope(k_n)> - <rope(q_m + s), rope(k_n + s)>|
/// where s is added to every coordinate present (t, and h, w when set).
double rope_score_shift_check(const Tensor& q, const Tensor& k,
                              std::span<const TokenPosition> q_positions,
                              std::span<const TokenPosition> k_positions, const RopeSpec& spec,
                              double shift);

}  // namespace pave
