// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The learnable patch: stacked temporal-aligned cross-attention blocks that
// read side-channel tokens, followed by a zero-gated adapter whose output is
// summed onto the video tokens. The token count seen by the LLM is unchanged.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pave/alignment.hpp"
#include "pave/params.hpp"
#include "pave/rope.hpp"
#include "pave/tensor.hpp"

namespace pave {

/// Layout of side-channel tokens. Temporal streams (audio-like) carry only a
/// time coordinate; Spatial streams arrive as grids of side_grid_h x side_grid_w
/// tokens per block.
enum class SideLayout { Temporal, Spatial };

/// Where fusion queries come from: projected video tokens, or free vectors.
enum class QueryMode { Visual, Learnable };

struct PatchConfig {
  std::size_t n_layers = 2;
  std::size_t hidden_dim = 512;
  std::size_t n_heads = 4;
  std::size_t model_dim = 0;
  std::size_t side_dim = 0;
  std::size_t mlp_ratio = 2;
  /// head_dim == 0 selects RopeSpec::spatiotemporal(hidden_dim / n_heads).
  RopeSpec rope{RopeMode::Spatiotemporal3D, 0, 10000.0, {}};
  SideLayout side_layout = SideLayout::Temporal;
  std::size_t side_grid_h = 1;
  std::size_t side_grid_w = 1;
  QueryMode query_mode = QueryMode::Visual;
  /// K * M; required for QueryMode::Learnable.
  std::size_t n_query_tokens = 0;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return n_heads ? hidden_dim / n_heads : 0; }
  RopeSpec effective_rope() const;
  /// Throws ConfigError.
  void validate() const;
};

struct FusionLayer {
  Tensor kv_norm_gamma, kv_norm_beta;
  Tensor q_norm_gamma, q_norm_beta;
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
  Tensor o_weight, o_bias;
  Tensor mlp_norm_gamma, mlp_norm_beta;
  Tensor mlp1_weight, mlp1_bias;
  Tensor mlp2_weight, mlp2_bias;
};

struct PavePatch {
  PatchConfig config;
  Tensor query_weight, query_bias;  // Visual
  Tensor query_embed;               // Learnable, [n_query_tokens, hidden]
  std::vector<FusionLayer> layers;
  Tensor adapter_fc1_weight, adapter_fc1_bias;
  Tensor adapter_fc2_weight, adapter_fc2_bias;
  Tensor adapter_norm_gamma, adapter_norm_beta;  // gamma starts at exactly 0

  NamedTensors named_parameters() const;
  std::size_t parameter_count() const;
};

PavePatch init_patch(const PatchConfig& config);

/// Rows x cols grid for M tokens per frame: the most square factorization.
std::pair<std::size_t, std::size_t> frame_grid(std::size_t tokens_per_frame);

/// Query coordinates for K frames of M tokens: t = frame, (h, w) = grid cell.
std::vector<TokenPosition> video_query_positions(std::size_t n_frames, std::size_t tokens_per_frame);

/// Key coordinates for the K x G slots of `plan`: slot i of group k sits at
/// t = k + i / G on the query timeline. Temporal layouts get h = w = 0, so in
/// 3-D mode only the temporal lanes of keys rotate; spatial layouts use the
/// token's cell inside its side block.
std::vector<TokenPosition> side_key_positions(const AlignmentPlan& plan, SideLayout layout,
                                              std::size_t grid_h, std::size_t grid_w);

/// Diagnostics from one fuse() call.
struct FuseTrace {
  bool no_side_tokens = false;
  std::size_t empty_groups = 0;
  std::size_t batch = 0, frames = 0, queries = 0, slots = 0, heads = 0;
  /// Per layer: post-softmax weights [batch * frames, heads, queries, slots].
  std::vector<std::vector<double>> attention;
};

/// Masked multi-head attention restricted to each frame's G key slots, with
/// rotary embeddings on queries and keys. Output is before the output
/// projection. queries: [B*K, M, hidden]; keys/values: [B*K, G, hidden];
/// positions are given for one episode (K*M and K*G entries).
Tensor temporal_cross_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                                const AlignmentPlan& plan,
                                std::span<const TokenPosition> query_positions,
                                std::span<const TokenPosition> key_positions, const RopeSpec& rope,
                                std::size_t n_heads, std::vector<double>* probs_out = nullptr);

/// Fusion output z^{v|s}, same shape as `video`. video: [K, M, d] or
/// [B, K, M, d]; side: [N, side_dim] or [B, N, side_dim]. N == 0 yields exact
/// zeros (flagged in the trace).
Tensor fuse(const Tensor& video, const Tensor& side, const PavePatch& patch,
            FuseTrace* trace = nullptr);

/// fuse() for a patch built with QueryMode::Learnable; throws otherwise.
Tensor fuse_learnable_query_variant(const Tensor& video, const Tensor& side, const PavePatch& patch,
                                    FuseTrace* trace = nullptr);

/// video + fuse(video, side, patch).
Tensor apply_patch(const Tensor& video, const Tensor& side, const PavePatch& patch,
                   FuseTrace* trace = nullptr);

}  // namespace pave
