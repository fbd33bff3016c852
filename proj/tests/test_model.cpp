// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "helpers.hpp"
#include "pave/errors.hpp"
#include "pave/model.hpp"

using namespace pave;
using pave::testing::bit_equal;
using pave::testing::randn;
using pave::testing::tiny_run_config;

TEST_CASE("initialization is deterministic and frozen") {
  const auto cfg = tiny_run_config().model;
  const auto a = init_model(cfg), b = init_model(cfg);
  CHECK(a.fingerprint() == b.fingerprint());
  for (const auto& [name, t] : a.all_parameters()) CHECK(!t.requires_grad());
  auto other = cfg;
  other.seed = 99;
  CHECK(init_model(other).fingerprint() != a.fingerprint());
  auto wider = cfg;
  wider.max_seq_len = cfg.max_seq_len + 1;
  CHECK(init_model(wider).fingerprint() != a.fingerprint());
}

TEST_CASE("fingerprint tracks weight edits") {
  auto m = init_model(tiny_run_config().model);
  const auto before = m.fingerprint();
  m.layers[0].wq.mutable_data()[3] += 1e-12;
  CHECK(m.fingerprint() != before);
}

TEST_CASE("decoder is causal") {
  const auto m = init_model(tiny_run_config().model);
  Rng rng(1);
  const auto x = randn({6, 16}, rng);
  auto y = Tensor::from_data({6, 16}, std::vector<double>(x.data().begin(), x.data().end()));
  for (std::size_t j = 0; j < 16; ++j) y.mutable_data()[5 * 16 + j] = rng.normal();
  const auto lx = forward_logits(m, x), ly = forward_logits(m, y);
  CHECK(bit_equal(lx.data().subspan(0, 5 * 16), ly.data().subspan(0, 5 * 16)));
}

TEST_CASE("batched forward equals per-sequence forward") {
  const auto m = init_model(tiny_run_config().model);
  Rng rng(2);
  const auto a = randn({5, 16}, rng), b = randn({5, 16}, rng);
  const std::vector<Tensor> parts{reshape(a, {1, 5, 16}), reshape(b, {1, 5, 16})};
  const auto batched = forward_logits(m, concat(parts, 0));
  CHECK(pave::testing::max_abs_diff(batched.data().subspan(5 * 16), forward_logits(m, b).data()) < 1e-12);
}

TEST_CASE("sequence length limit and token id checks") {
  auto cfg = tiny_run_config().model;
  cfg.max_seq_len = 20;
  const auto m = init_model(cfg);
  Rng rng(3);
  CHECK_THROWS_AS(forward_logits(m, randn({21, 16}, rng)), ShapeError);
  const std::vector<int> bad{0, 16};
  CHECK_THROWS_WITH(embed_tokens(m, bad), doctest::Contains("outside vocabulary"));
}

TEST_CASE("LoRA targets resolve to decoder projections") {
  const auto m = init_model(tiny_run_config().model);
  CHECK(m.projection("layers.0.mlp1").shape() == Shape{32, 16});
  CHECK_THROWS(m.projection("layers.3.q"));
  CHECK_THROWS(m.projection("layers.0.z"));
  LoraSpec spec;
  spec.rank = 2;
  const auto adapter = attach_lora(m, spec, 1);
  CHECK(adapter.layers.size() == 6);
  CHECK(adapter.find("layers.0.o") != nullptr);
}

TEST_CASE("sequence assembly and targets line up") {
  const auto rc = tiny_run_config();
  const auto m = init_model(rc.model);
  EpisodeBatch batch;
  batch.size = 1;
  batch.video_tokens = Tensor::zeros({1, 4, 4, 16});
  batch.query_ids = {9, 13};
  batch.answer_ids = {3, 5};
  batch.query_len = 2;
  batch.answer_len = 2;
  const auto seq = assemble_sequence(m, batch.video_tokens, Tensor{}, batch);
  CHECK(seq.shape() == Shape{1, 16 + 2 + 1, 16});
  const auto t = sequence_targets(batch, 16);
  CHECK(t.seq_len == 19);
  CHECK(t.mask[17] == 1);
  CHECK(t.targets[17] == 3);
  CHECK(t.targets[18] == 5);
  std::size_t n = 0;
  for (auto v : t.mask) n += v;
  CHECK(n == 2);
}

TEST_CASE("greedy decoding is deterministic") {
  const auto m = init_model(tiny_run_config().model);
  Rng rng(4);
  const auto visual = randn({4, 4, 16}, rng);
  const std::vector<int> query{9, 13};
  const auto a = greedy_decode(m, visual, query, 3), b = greedy_decode(m, visual, query, 3);
  CHECK(a == b);
  CHECK(a.size() == 3);
}

TEST_CASE("encoder shape validation") {
  const auto m = init_model(tiny_run_config().model);
  Rng rng(5);
  CHECK(encode_video(m, randn({4, 4, 4}, rng)).shape() == Shape{4, 4, 16});
  CHECK_THROWS_AS(encode_video(m, randn({3, 4, 4}, rng)), ShapeError);
  CHECK_THROWS_AS(encode_side(m, randn({3, 5}, rng)), ShapeError);
}

TEST_CASE("invalid model configs are rejected") {
  auto cfg = tiny_run_config().model;
  cfg.n_lm_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_run_config().model;
  cfg.max_seq_len = 16;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
