// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "helpers.hpp"
#include "pave/errors.hpp"
#include "pave/grad_check.hpp"
#include "pave/lora.hpp"

using namespace pave;
using pave::testing::bit_equal;
using pave::testing::max_abs_diff;
using pave::testing::randn;

TEST_CASE("fresh LoRA leaves the projection unchanged") {
  Rng rng(1);
  const auto w = randn({6, 5}, rng);
  const auto layer = lora_init(w, 2, 16.0, 7);
  const auto x = randn({4, 5}, rng);
  CHECK(bit_equal(lora_forward(layer, x).data(), linear(x, w).data()));
  const auto delta = lora_delta(layer, x);
  for (double v : delta.data()) CHECK(v == 0.0);
  CHECK(layer.scaling() == 8.0);
}

TEST_CASE("merged weight reproduces the adapted forward") {
  Rng rng(2);
  const auto w = randn({6, 5}, rng);
  auto layer = lora_init(w, 3, 6.0, 3);
  for (auto& v : layer.b.mutable_data()) v = rng.normal();
  const auto x = randn({4, 5}, rng);
  const auto merged = merge_lora(layer);
  CHECK(max_abs_diff(lora_forward(layer, x).data(), linear(x, merged).data()) < 1e-12);
  CHECK(!merged.requires_grad());
}

TEST_CASE("gradients reach A and B but not the base weight") {
  Rng rng(3);
  const auto w = randn({4, 3}, rng);
  auto layer = lora_init(w, 2, 4.0, 5);
  for (auto& v : layer.b.mutable_data()) v = rng.normal();
  layer.a.set_requires_grad(true);
  layer.b.set_requires_grad(true);
  const auto x = randn({5, 3}, rng);
  auto fn = [&] { return sum(mul(lora_forward(layer, x), lora_forward(layer, x))); };
  std::vector<Tensor> params{layer.a, layer.b};
  CHECK(grad_check(fn, params, 1e-5, 1e-5).max_rel_error < 1e-7);
  fn().backward();
  CHECK(!layer.base_weight.has_grad());
}

TEST_CASE("rank bounds are enforced") {
  Rng rng(4);
  const auto w = randn({4, 3}, rng);
  CHECK_THROWS_AS(lora_init(w, 0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(lora_init(w, 4, 1.0, 1), ConfigError);
  CHECK_NOTHROW(lora_init(w, 3, 1.0, 1));
}
