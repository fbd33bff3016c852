// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/patch.hpp"

#include <cmath>
#include <string>

#include "pave/errors.hpp"

namespace pave {

RopeSpec PatchConfig::effective_rope() const {
  if (rope.head_dim != 0) return rope;
  RopeSpec spec = rope.mode == RopeMode::Temporal1D ? RopeSpec::temporal(head_dim(), rope.base)
                                                    : RopeSpec::spatiotemporal(head_dim(), rope.base);
  return spec;
}

void PatchConfig::validate() const {
  if (hidden_dim == 0 || n_heads == 0 || model_dim == 0 || side_dim == 0 || mlp_ratio == 0) {
    throw ConfigError("patch: hidden_dim, n_heads, model_dim, side_dim and mlp_ratio must be positive");
  }
  if (hidden_dim % n_heads != 0) {
    throw ConfigError("patch: hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  const auto spec = effective_rope();
  if (spec.head_dim != head_dim()) throw ConfigError("patch: rope head_dim must equal hidden_dim / n_heads");
  spec.validate();
  if (side_layout == SideLayout::Spatial && (side_grid_h == 0 || side_grid_w == 0)) {
    throw ConfigError("patch: spatial side layout needs a non-empty grid");
  }
  if (query_mode == QueryMode::Learnable && n_query_tokens == 0) {
    throw ConfigError("patch: learnable queries need n_query_tokens = K * M");
  }
}

PavePatch init_patch(const PatchConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto h = config.hidden_dim, d = config.model_dim, sd = config.side_dim;
  const auto inner = config.mlp_ratio * h;
  auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
  auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };

  PavePatch p;
  p.config = config;
  if (config.query_mode == QueryMode::Visual) {
    p.query_weight = init_fan_in(h, d, rng, true);
    p.query_bias = zeros(h);
  } else {
    p.query_embed = Tensor::normal({config.n_query_tokens, h}, 1.0, rng, true);
  }
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    FusionLayer L;
    L.kv_norm_gamma = ones(sd);
    L.kv_norm_beta = zeros(sd);
    L.q_norm_gamma = ones(h);
    L.q_norm_beta = zeros(h);
    L.k_weight = init_fan_in(h, sd, rng, true);
    L.k_bias = zeros(h);
    L.v_weight = init_fan_in(h, sd, rng, true);
    L.v_bias = zeros(h);
    L.o_weight = init_fan_in(h, h, rng, true);
    L.o_bias = zeros(h);
    L.mlp_norm_gamma = ones(h);
    L.mlp_norm_beta = zeros(h);
    L.mlp1_weight = init_fan_in(inner, h, rng, true);
    L.mlp1_bias = zeros(inner);
    L.mlp2_weight = init_fan_in(h, inner, rng, true);
    L.mlp2_bias = zeros(h);
    p.layers.push_back(std::move(L));
  }
  p.adapter_fc1_weight = init_fan_in(h, h, rng, true);
  p.adapter_fc1_bias = zeros(h);
  p.adapter_fc2_weight = init_fan_in(d, h, rng, true);
  p.adapter_fc2_bias = zeros(d);
  p.adapter_norm_gamma = zeros(d);
  p.adapter_norm_beta = zeros(d);
  return p;
}

NamedTensors PavePatch::named_parameters() const {
  NamedTensors out;
  if (config.query_mode == QueryMode::Visual) {
    out.emplace_back("query.weight", query_weight);
    out.emplace_back("query.bias", query_bias);
  } else {
    out.emplace_back("query.embed", query_embed);
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "kv_norm.gamma", L.kv_norm_gamma);
    out.emplace_back(pre + "kv_norm.beta", L.kv_norm_beta);
    out.emplace_back(pre + "q_norm.gamma", L.q_norm_gamma);
    out.emplace_back(pre + "q_norm.beta", L.q_norm_beta);
    out.emplace_back(pre + "k_proj.weight", L.k_weight);
    out.emplace_back(pre + "k_proj.bias", L.k_bias);
    out.emplace_back(pre + "v_proj.weight", L.v_weight);
    out.emplace_back(pre + "v_proj.bias", L.v_bias);
    out.emplace_back(pre + "o_proj.weight", L.o_weight);
    out.emplace_back(pre + "o_proj.bias", L.o_bias);
    out.emplace_back(pre + "mlp_norm.gamma", L.mlp_norm_gamma);
    out.emplace_back(pre + "mlp_norm.beta", L.mlp_norm_beta);
    out.emplace_back(pre + "mlp1.weight", L.mlp1_weight);
    out.emplace_back(pre + "mlp1.bias", L.mlp1_bias);
    out.emplace_back(pre + "mlp2.weight", L.mlp2_weight);
    out.emplace_back(pre + "mlp2.bias", L.mlp2_bias);
  }
  out.emplace_back("adapter.fc1.weight", adapter_fc1_weight);
  out.emplace_back("adapter.fc1.bias", adapter_fc1_bias);
  out.emplace_back("adapter.fc2.weight", adapter_fc2_weight);
  out.emplace_back("adapter.fc2.bias", adapter_fc2_bias);
  out.emplace_back("adapter.norm.gamma", adapter_norm_gamma);
  out.emplace_back("adapter.norm.beta", adapter_norm_beta);
  return out;
}

std::size_t PavePatch::parameter_count() const { return total_numel(named_parameters()); }

std::pair<std::size_t, std::size_t> frame_grid(std::size_t tokens_per_frame) {
  if (tokens_per_frame == 0) return {0, 0};
  auto w = static_cast<std::size_t>(std::sqrt(static_cast<double>(tokens_per_frame)));
  while (w > 1 && tokens_per_frame % w != 0) --w;
  return {w, tokens_per_frame / w};
}

std::vector<TokenPosition> video_query_positions(std::size_t n_frames, std::size_t tokens_per_frame) {
  const auto [rows, cols] = frame_grid(tokens_per_frame);
  (void)rows;
  std::vector<TokenPosition> out;
  out.reserve(n_frames * tokens_per_frame);
  for (std::size_t k = 0; k < n_frames; ++k)
    for (std::size_t m = 0; m < tokens_per_frame; ++m)
      out.push_back({static_cast<double>(k), static_cast<double>(m / cols), static_cast<double>(m % cols)});
  return out;
}

std::vector<TokenPosition> side_key_positions(const AlignmentPlan& plan, SideLayout layout,
                                              std::size_t grid_h, std::size_t grid_w) {
  std::vector<TokenPosition> out;
  const auto g = plan.group_size;
  out.reserve(plan.n_frames * g);
  const std::size_t block = grid_h * grid_w;
  for (std::size_t k = 0; k < plan.n_frames; ++k) {
    const auto lo = plan.boundaries[k].first;
    for (std::size_t i = 0; i < g; ++i) {
      TokenPosition p;
      p.t = static_cast<double>(k) + static_cast<double>(i) / static_cast<double>(g);
      p.h = 0.0;
      p.w = 0.0;
      if (layout == SideLayout::Spatial && plan.mask[k * g + i]) {
        const auto cell = (lo + i) % block;
        p.h = static_cast<double>(cell / grid_w);
        p.w = static_cast<double>(cell % grid_w);
      }
      out.push_back(p);
    }
  }
  return out;
}

namespace {

// Repeat a per-episode position list for every episode in the batch.
std::vector<TokenPosition> tile(std::span<const TokenPosition> one, std::size_t times) {
  std::vector<TokenPosition> out;
  out.reserve(one.size() * times);
  for (std::size_t b = 0; b < times; ++b) out.insert(out.end(), one.begin(), one.end());
  return out;
}

}  // namespace

Tensor temporal_cross_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                const AlignmentPlan& plan,
                                std::span<const TokenPosition> query_positions,
                                std::span<const TokenPosition> key_positions, const RopeSpec& rope,
                                std::size_t n_heads, std::vector<double>* probs_out) {
  if (queries.rank() != 3 || keys.rank() != 3 || values.rank() != 3) {
    throw ShapeError("temporal_cross_attention: expected rank-3 queries, keys and values");
  }
  const auto bk = queries.dim(0), m = queries.dim(1), hidden = queries.dim(2);
  const auto k_frames = plan.n_frames, g = plan.group_size;
  if (bk % k_frames != 0 || keys.dim(0) != bk || keys.dim(1) != g || keys.dim(2) != hidden ||
      keys.shape() != values.shape()) {
    throw ShapeError("temporal_cross_attention: queries " + shape_str(queries.shape()) + ", keys " +
                     shape_str(keys.shape()) + " do not match plan (K=" + std::to_string(k_frames) +
                     ", G=" + std::to_string(g) + ")");
  }
  if (query_positions.size() != k_frames * m || key_positions.size() != k_frames * g) {
    throw ShapeError("temporal_cross_attention: position lists do not match K*M / K*G");
  }
  if (hidden != n_heads * rope.head_dim) {
    throw ShapeError("temporal_cross_attention: hidden width != heads x rope head_dim");
  }
  const auto batch = bk / k_frames;
  const auto qpos = tile(query_positions, batch);
  const auto kpos = tile(key_positions, batch);
  const Tensor q_rot = rotate_pairs(queries, rope_table(qpos, rope), n_heads);
  const Tensor k_rot = rotate_pairs(keys, rope_table(kpos, rope), n_heads);

  auto valid = std::make_shared<std::vector<std::uint8_t>>();
  valid->reserve(bk * g);
  for (std::size_t b = 0; b < batch; ++b) valid->insert(valid->end(), plan.mask.begin(), plan.mask.end());

  AttentionOptions opt;
  opt.heads = n_heads;
  opt.key_valid = std::move(valid);
  opt.probs_out = probs_out;
  return attention(q_rot, k_rot, values, opt);
}

Tensor fuse(const Tensor& video, const Tensor& side, const PavePatch& patch, FuseTrace* trace) {
  const auto& cfg = patch.config;
  const bool batched = video.rank() == 4;
  if (!(video.rank() == 3 || batched) || side.rank() != video.rank() - 1) {
    throw ShapeError("fuse: video must be [K,M,d] or [B,K,M,d] with side [N,s] or [B,N,s]; got " +
                     shape_str(video.shape()) + " and " + shape_str(side.shape()));
  }
  const std::size_t batch = batched ? video.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const auto k_frames = video.dim(off), m = video.dim(off + 1), d = video.dim(off + 2);
  const auto n_side = side.dim(off), sd = side.dim(off + 1);
  if (batched && side.dim(0) != batch) throw ShapeError("fuse: video and side batch sizes differ");
  if (d != cfg.model_dim || sd != cfg.side_dim) {
    throw ShapeError("fuse: token widths (" + std::to_string(d) + ", " + std::to_string(sd) +
                     ") do not match patch config (" + std::to_string(cfg.model_dim) + ", " +
                     std::to_string(cfg.side_dim) + ")");
  }
  if (cfg.query_mode == QueryMode::Learnable && cfg.n_query_tokens != k_frames * m) {
    throw ShapeError("fuse: learnable queries sized for " + std::to_string(cfg.n_query_tokens) +
                     " tokens, video has " + std::to_string(k_frames * m));
  }
  if (k_frames == 0) throw ShapeError("fuse: video has no frames");

  const auto plan = plan_alignment(n_side, k_frames);
  if (trace) {
    *trace = FuseTrace{};
    trace->batch = batch;
    trace->frames = k_frames;
    trace->queries = m;
    trace->slots = plan.group_size;
    trace->heads = cfg.n_heads;
    trace->empty_groups = plan.empty_groups;
  }
  if (n_side == 0) {
    if (trace) trace->no_side_tokens = true;
    return Tensor::zeros(video.shape());
  }

  const auto h = cfg.hidden_dim, g = plan.group_size;
  const auto rows = batch * k_frames * m;
  const RopeSpec rope = cfg.effective_rope();
  const auto qpos = video_query_positions(k_frames, m);
  const auto kpos = side_key_positions(plan, cfg.side_layout, cfg.side_grid_h, cfg.side_grid_w);

  Tensor x;
  if (cfg.query_mode == QueryMode::Visual) {
    x = linear(reshape(video, {rows, d}), patch.query_weight, patch.query_bias);
  } else {
    std::vector<Tensor> copies(batch, patch.query_embed);
    x = batch == 1 ? patch.query_embed : concat(copies, 0);
  }

  std::vector<std::ptrdiff_t> gather;
  gather.reserve(batch * k_frames * g);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < k_frames; ++k) {
      const auto lo = plan.boundaries[k].first;
      for (std::size_t i = 0; i < g; ++i) {
        gather.push_back(plan.mask[k * g + i] ? static_cast<std::ptrdiff_t>(b * n_side + lo + i) : -1);
      }
    }

  const Tensor side_rows = reshape(side, {batch * n_side, sd});
  for (const auto& L : patch.layers) {
    const Tensor s = layer_norm(side_rows, L.kv_norm_gamma, L.kv_norm_beta);
    const Tensor keys = gather_rows(linear(s, L.k_weight, L.k_bias), gather);
    const Tensor vals = gather_rows(linear(s, L.v_weight, L.v_bias), gather);
    const Tensor q = layer_norm(x, L.q_norm_gamma, L.q_norm_beta);
    std::vector<double>* probs = nullptr;
    if (trace) probs = &trace->attention.emplace_back();
    const Tensor mixed = temporal_cross_attention(
        reshape(q, {batch * k_frames, m, h}), reshape(keys, {batch * k_frames, g, h}),
        reshape(vals, {batch * k_frames, g, h}), plan, qpos, kpos, rope, cfg.n_heads, probs);
    x = add(x, linear(reshape(mixed, {rows, h}), L.o_weight, L.o_bias));
    const Tensor hidden = gelu(linear(layer_norm(x, L.mlp_norm_gamma, L.mlp_norm_beta), L.mlp1_weight,
                                      L.mlp1_bias));
    x = add(x, linear(hidden, L.mlp2_weight, L.mlp2_bias));
  }

  const Tensor a = gelu(linear(x, patch.adapter_fc1_weight, patch.adapter_fc1_bias));
  const Tensor y = layer_norm(linear(a, patch.adapter_fc2_weight, patch.adapter_fc2_bias),
                              patch.adapter_norm_gamma, patch.adapter_norm_beta);
  return reshape(y, video.shape());
}

Tensor fuse_learnable_query_variant(const Tensor& video, const Tensor& side, const PavePatch& patch,
                                    FuseTrace* trace) {
  if (patch.config.query_mode != QueryMode::Learnable) {
    throw ConfigError("fuse_learnable_query_variant: patch was built with visual queries");
  }
  return fuse(video, side, patch, trace);
}

Tensor apply_patch(const Tensor& video, const Tensor& side, const PavePatch& patch, FuseTrace* trace) {
  return add(video, fuse(video, side, patch, trace));
}

}  // namespace pave
