// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/rope.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pave/errors.hpp"

namespace pave {

std::array<std::size_t, 3> default_axis_split(std::size_t head_dim) {
  const std::size_t third = (head_dim / 3) / 2 * 2;
  return {head_dim - 2 * third, third, third};
}

RopeSpec RopeSpec::temporal(std::size_t head_dim, double base) {
  RopeSpec s;
  s.mode = RopeMode::Temporal1D;
  s.head_dim = head_dim;
  s.base = base;
  s.axis_split = {head_dim, 0, 0};
  return s;
}

RopeSpec RopeSpec::spatiotemporal(std::size_t head_dim, double base) {
  RopeSpec s;
  s.mode = RopeMode::Spatiotemporal3D;
  s.head_dim = head_dim;
  s.base = base;
  s.axis_split = default_axis_split(head_dim);
  return s;
}

void RopeSpec::validate() const {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rope: head_dim must be even and positive, got " + std::to_string(head_dim));
  }
  if (!(base > 1.0)) throw ConfigError("rope: base must exceed 1");
  if (mode == RopeMode::Spatiotemporal3D) {
    const auto [dt, dh, dw] = axis_split;
    if (dt % 2 || dh % 2 || dw % 2) throw ConfigError("rope: 3-D lane split must be even per axis");
    if (dt + dh + dw != head_dim) {
      throw ConfigError("rope: lane split " + std::to_string(dt) + "+" + std::to_string(dh) + "+" +
                        std::to_string(dw) + " != head_dim " + std::to_string(head_dim));
    }
  }
}

std::shared_ptr<const RotationTable> rope_table(std::span<const TokenPosition> positions,
                                                const RopeSpec& spec) {
  spec.validate();
  auto table = std::make_shared<RotationTable>();
  const std::size_t pairs = spec.head_dim / 2;
  table->rows = positions.size();
  table->pairs = pairs;
  table->cos.resize(positions.size() * pairs);
  table->sin.resize(positions.size() * pairs);

  // (axis, inverse frequency) for each lane pair.
  std::vector<std::pair<int, double>> lanes;
  lanes.reserve(pairs);
  auto add_band = [&](int axis, std::size_t width) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      lanes.emplace_back(axis, std::pow(spec.base, -2.0 * static_cast<double>(i) / static_cast<double>(width)));
    }
  };
  if (spec.mode == RopeMode::Temporal1D) {
    add_band(0, spec.head_dim);
  } else {
    add_band(0, spec.axis_split[0]);
    add_band(1, spec.axis_split[1]);
    add_band(2, spec.axis_split[2]);
  }

  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto& p = positions[r];
    if (spec.mode == RopeMode::Spatiotemporal3D && (!p.h || !p.w)) {
      throw ConfigError("rope: 3-D mode needs h and w for token " + std::to_string(r));
    }
    for (std::size_t i = 0; i < pairs; ++i) {
      const auto [axis, inv_freq] = lanes[i];
      const double coord = axis == 0 ? p.t : (axis == 1 ? *p.h : *p.w);
      const double angle = coord * inv_freq;
      table->cos[r * pairs + i] = std::cos(angle);
      table->sin[r * pairs + i] = std::sin(angle);
    }
  }
  return table;
}

Tensor apply_rope(const Tensor& x, std::span<const TokenPosition> positions, const RopeSpec& spec,
                  std::size_t heads) {
  if (x.rank() == 0 || x.shape().back() != heads * spec.head_dim) {
    throw ShapeError("apply_rope: last axis must be heads x head_dim = " +
                     std::to_string(heads * spec.head_dim));
  }
  if (x.numel() / x.shape().back() != positions.size()) {
    throw ShapeError("apply_rope: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(x.numel() / x.shape().back()) + " tokens");
  }
  return rotate_pairs(x, rope_table(positions, spec), heads);
}

namespace {

std::vector<TokenPosition> shifted(std::span<const TokenPosition> in, double s) {
  std::vector<TokenPosition> out(in.begin(), in.end());
  for (auto& p : out) {
    p.t += s;
    if (p.h) *p.h += s;
    if (p.w) *p.w += s;
  }
  return out;
}

std::vector<double> dots(const Tensor& q, const Tensor& k) {
  const std::size_t d = q.shape().back();
  const std::size_t nq = q.numel() / d, nk = k.numel() / d;
  std::vector<double> out(nq * nk);
  for (std::size_t m = 0; m < nq; ++m)
    for (std::size_t n = 0; n < nk; ++n) {
      double s = 0.0;
      for (std::size_t e = 0; e < d; ++e) s += q.data()[m * d + e] * k.data()[n * d + e];
      out[m * nk + n] = s;
    }
  return out;
}

}  // namespace

double rope_score_shift_check(const Tensor& q, const Tensor& k,
                              std::span<const TokenPosition> q_positions,
                              std::span<const TokenPosition> k_positions, const RopeSpec& spec,
                              double shift) {
  const auto base = dots(apply_rope(q, q_positions, spec), apply_rope(k, k_positions, spec));
  const auto qs = shifted(q_positions, shift);
  const auto ks = shifted(k_positions, shift);
  const auto moved = dots(apply_rope(q, qs, spec), apply_rope(k, ks, spec));
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, std::abs(base[i] - moved[i]));
  return worst;
}

}  // namespace pave
