// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "pave/errors.hpp"
#include "pave/grad_check.hpp"
#include "pave/patch.hpp"

using namespace pave;
using pave::testing::bit_equal;
using pave::testing::randn;

namespace {

PatchConfig small_patch(std::size_t d = 12, std::size_t s = 6) {
  PatchConfig c;
  c.n_layers = 2;
  c.hidden_dim = 8;
  c.n_heads = 2;
  c.model_dim = d;
  c.side_dim = s;
  c.seed = 3;
  return c;
}

void open_gate(PavePatch& p, Rng& rng) {
  for (auto& v : p.adapter_norm_gamma.mutable_data()) v = rng.normal();
}

}  // namespace

TEST_CASE("a fresh patch contributes exact zeros") {
  Rng rng(1);
  const auto patch = init_patch(small_patch());
  const auto video = randn({4, 6, 12}, rng), side = randn({10, 6}, rng);
  const auto z = fuse(video, side, patch);
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK(bit_equal(apply_patch(video, side, patch).data(), video.data()));
}

TEST_CASE("empty side stream yields zeros and is flagged") {
  Rng rng(2);
  auto patch = init_patch(small_patch());
  open_gate(patch, rng);
  FuseTrace trace;
  const auto z = fuse(randn({4, 6, 12}, rng), Tensor::zeros({0, 6}), patch, &trace);
  CHECK(trace.no_side_tokens);
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("each frame only sees its own neighborhood") {
  Rng rng(3);
  auto patch = init_patch(small_patch());
  open_gate(patch, rng);
  const auto video = randn({4, 6, 12}, rng);
  const auto side = randn({8, 6}, rng);
  auto side2 = Tensor::from_data({8, 6}, std::vector<double>(side.data().begin(), side.data().end()));
  for (std::size_t j = 0; j < 6; ++j) side2.mutable_data()[5 * 6 + j] += 1.0;  // token 5 lies in frame 2
  const auto a = fuse(video, side, patch), b = fuse(video, side2, patch);
  const auto per_frame = 6 * 12;
  for (std::size_t k = 0; k < 4; ++k) {
    const bool same = bit_equal(a.data().subspan(k * per_frame, per_frame), b.data().subspan(k * per_frame, per_frame));
    CHECK(same == (k != 2));
  }
}

TEST_CASE("batched fuse equals per-episode fuse") {
  Rng rng(4);
  auto patch = init_patch(small_patch());
  open_gate(patch, rng);
  const auto v0 = randn({4, 6, 12}, rng), v1 = randn({4, 6, 12}, rng);
  const auto s0 = randn({7, 6}, rng), s1 = randn({7, 6}, rng);
  const std::vector<Tensor> vs{reshape(v0, {1, 4, 6, 12}), reshape(v1, {1, 4, 6, 12})};
  const std::vector<Tensor> ss{reshape(s0, {1, 7, 6}), reshape(s1, {1, 7, 6})};
  const auto batched = fuse(concat(vs, 0), concat(ss, 0), patch);
  const auto one = fuse(v1, s1, patch);
  CHECK(pave::testing::max_abs_diff(batched.data().subspan(4 * 6 * 12), one.data()) < 1e-12);
}

TEST_CASE("attention rows are valid softmax rows with zero padding") {
  Rng rng(5);
  for (const bool trained : {false, true}) {
    auto patch = init_patch(small_patch());
    if (trained) open_gate(patch, rng);
    FuseTrace trace;
    fuse(randn({4, 6, 12}, rng), randn({10, 6}, rng), patch, &trace);
    const auto plan = plan_alignment(10, 4);
    REQUIRE(trace.attention.size() == 2);
    for (const auto& probs : trace.attention) {
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t q = 0; q < 6; ++q) {
            double s = 0.0;
            for (std::size_t g = 0; g < plan.group_size; ++g) {
              const double p = probs[((k * 2 + h) * 6 + q) * plan.group_size + g];
              if (!plan.mask[k * plan.group_size + g]) CHECK(p == 0.0);
              s += p;
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
          }
    }
  }
}

TEST_CASE("gradients through the patch agree with finite differences") {
  Rng rng(6);
  for (auto mode : {QueryMode::Visual, QueryMode::Learnable}) {
    auto cfg = small_patch(8, 4);
    cfg.n_layers = 1;
    cfg.query_mode = mode;
    cfg.n_query_tokens = 3 * 2;
    auto patch = init_patch(cfg);
    open_gate(patch, rng);
    auto params = patch.named_parameters();
    set_requires_grad(params, true);
    const auto video = randn({3, 2, 8}, rng), side = randn({5, 4}, rng);
    const auto target = randn({3, 2, 8}, rng);
    auto fn = [&] {
      const auto diff = sub(fuse(video, side, patch), target);
      return mean(mul(diff, diff));
    };
    std::vector<Tensor> ts;
    for (auto& p : params) ts.push_back(p.second);
    CHECK(grad_check(fn, ts, 1e-5, 1e-5).max_rel_error < 1e-5);
  }
}

TEST_CASE("learnable queries ignore video content") {
  Rng rng(7);
  auto cfg = small_patch();
  cfg.query_mode = QueryMode::Learnable;
  cfg.n_query_tokens = 4 * 6;
  auto patch = init_patch(cfg);
  open_gate(patch, rng);
  const auto side = randn({8, 6}, rng);
  const auto a = fuse_learnable_query_variant(randn({4, 6, 12}, rng), side, patch);
  const auto b = fuse_learnable_query_variant(randn({4, 6, 12}, rng), side, patch);
  CHECK(bit_equal(a.data(), b.data()));
  CHECK_THROWS_AS(fuse_learnable_query_variant(randn({4, 6, 12}, rng), side, init_patch(small_patch())),
                  ConfigError);
  CHECK_THROWS_AS(fuse(randn({4, 5, 12}, rng), side, patch), ShapeError);
}

TEST_CASE("configuration and shape errors") {
  auto cfg = small_patch();
  cfg.hidden_dim = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_patch();
  cfg.query_mode = QueryMode::Learnable;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  Rng rng(8);
  const auto patch = init_patch(small_patch());
  CHECK_THROWS_AS(fuse(randn({4, 6, 11}, rng), randn({8, 6}, rng), patch), ShapeError);
  CHECK_THROWS_AS(fuse(randn({4, 6, 12}, rng), randn({8, 5}, rng), patch), ShapeError);
  CHECK_THROWS_AS(fuse(randn({4, 6, 12}, rng), randn({2, 8, 6}, rng), patch), ShapeError);
}

TEST_CASE("query and key positions follow frames and group slots") {
  const auto qp = video_query_positions(2, 6);
  CHECK(qp.size() == 12);
  CHECK(frame_grid(6) == std::pair<std::size_t, std::size_t>{2, 3});
  CHECK(frame_grid(16) == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK(qp[7].t == 1.0);
  CHECK(*qp[7].h == 0.0);
  CHECK(*qp[7].w == 1.0);
  const auto plan = plan_alignment(6, 2);
  const auto kp = side_key_positions(plan, SideLayout::Temporal, 1, 1);
  CHECK(kp.size() == 6);
  CHECK(kp[4].t == doctest::Approx(1.0 + 1.0 / 3.0));
  CHECK(*kp[4].h == 0.0);
}

TEST_CASE("parameter layout is stable") {
  const auto patch = init_patch(small_patch());
  const auto names = patch.named_parameters();
  CHECK(names.front().first == "query.weight");
  CHECK(names.back().first == "adapter.norm.beta");
  std::size_t total = 0;
  for (const auto& [n, t] : names) total += t.numel();
  CHECK(patch.parameter_count() == total);
}
