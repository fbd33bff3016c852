// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit tests.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pave/config.hpp"
#include "pave/model.hpp"
#include "pave/rng.hpp"
#include "pave/tensor.hpp"

namespace pave::testing {

/// Width-16 model that runs a forward pass in well under a millisecond.
inline RunConfig tiny_run_config() {
  RunConfig c = default_run_config();
  c.model.d = 16;
  c.model.vocab_size = 16;
  c.model.n_lm_layers = 1;
  c.model.n_lm_heads = 2;
  c.model.d_ff = 32;
  c.model.n_frames = 4;
  c.model.tokens_per_frame = 4;
  c.model.raw_video_dim = 4;
  c.model.raw_side_dim = 4;
  c.model.side_dim = 8;
  c.patch.n_layers = 1;
  c.patch.hidden_dim = 8;
  c.patch.n_heads = 2;
  c.lora.rank = 2;
  c.task.n_side = 8;
  c.task.dense_rate = 4;
  c.train.batch_size = 4;
  c.train.train_episodes = 16;
  c.train.eval_episodes = 8;
  return c;
}

inline Tensor randn(Shape shape, Rng& rng, bool requires_grad = false) {
  return Tensor::normal(std::move(shape), 1.0, rng, requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace pave::testing
