// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Toy stand-in for a pretrained video LLM: frozen random-projection encoders
// for video and side-channel features, a frozen text embedding table, and a
// small pre-norm decoder-only transformer with 1-D rotary self-attention.
// The input sequence is always video tokens, then query text, then answer text.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pave/lora.hpp"
#include "pave/params.hpp"
#include "pave/tensor.hpp"

namespace pave {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t vocab_size = 64;
  std::size_t n_lm_layers = 2;
  std::size_t n_lm_heads = 4;
  std::size_t d_ff = 256;
  std::size_t n_frames = 8;          // K
  std::size_t tokens_per_frame = 16;  // M
  std::size_t max_seq_len = 512;
  std::size_t raw_video_dim = 16;
  std::size_t raw_side_dim = 16;
  std::size_t side_dim = 32;
  double rope_base = 10000.0;
  std::uint64_t seed = 1;

  void validate() const;
  /// key=value lines; part of the fingerprint and of patch files.
  std::string describe() const;
};

struct DecoderLayer {
  Tensor attn_norm_gamma, attn_norm_beta;
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor mlp_norm_gamma, mlp_norm_beta;
  Tensor w1;  // [d_ff, d]
  Tensor w2;  // [d, d_ff]
};

struct ToyVideoLLM {
  ModelConfig config;
  Tensor video_encoder;  // h_v: [d, raw_video_dim]
  Tensor side_encoder;   // h_s: [side_dim, raw_side_dim]
  Tensor embedding;      // h_t: [vocab, d]
  std::vector<DecoderLayer> layers;
  Tensor final_norm_gamma, final_norm_beta;
  Tensor lm_head;  // [vocab, d]

  /// Decoder weights (theta): embedding, layers, final norm, head.
  NamedTensors llm_parameters() const;
  NamedTensors encoder_parameters() const;
  NamedTensors all_parameters() const;
  /// Projection weight by LoRA target name ("layers.<l>.<q|k|v|o|mlp1|mlp2>").
  const Tensor& projection(const std::string& target) const;
  /// Hash of the config and every frozen weight.
  std::uint64_t fingerprint() const;
};

/// All weights frozen (requires_grad = false).
ToyVideoLLM init_model(const ModelConfig& config);

/// LoRA on spec.targets of every decoder layer.
LoraAdapter attach_lora(const ToyVideoLLM& model, const LoraSpec& spec, std::uint64_t seed);

/// h_v: raw [.., raw_video_dim] -> [.., d]. Validates K and M on [K, M, raw]
/// or [B, K, M, raw] inputs.
Tensor encode_video(const ToyVideoLLM& model, const Tensor& raw_frames);
/// h_s: raw [.., raw_side_dim] -> [.., side_dim].
Tensor encode_side(const ToyVideoLLM& model, const Tensor& raw_side);
/// h_t rows for token ids -> [n, d].
Tensor embed_tokens(const ToyVideoLLM& model, std::span<const int> ids);

/// Causal decoder over input embeddings [S, d] or [B, S, d]; returns logits
/// [S, vocab] or [B, S, vocab]. Every active adapter adds its LoRA delta.
/// Throws ShapeError when S exceeds max_seq_len.
Tensor forward_logits(const ToyVideoLLM& model, const Tensor& inputs,
                      std::span<const LoraAdapter* const> loras = {});

/// Argmax decoding of max_len tokens after [visual, query]; ties go to the
/// lowest token id. visual: [K, M, d] or any [T, d]-reshapable prefix.
std::vector<int> greedy_decode(const ToyVideoLLM& model, const Tensor& visual,
                               std::span<const int> query_ids, std::size_t max_len,
                               std::span<const LoraAdapter* const> loras = {});

/// One episode. side_tokens holds one tensor per side stream, [N_s, side_dim].
struct Episode {
  Tensor video_tokens;  // [K, M, d]
  std::vector<Tensor> side_tokens;
  std::vector<int> query_ids;
  std::vector<int> answer_ids;
  /// Ground-truth bookkeeping from the generator (not model inputs).
  int planted_frame = -1;
  std::vector<std::ptrdiff_t> planted_side_index;  // per stream, -1 if none
  int visual_cue = -1;
};

/// Equal-shape episodes stacked on a leading batch axis.
struct EpisodeBatch {
  std::size_t size = 0;
  Tensor video_tokens;               // [B, K, M, d]
  std::vector<Tensor> side_tokens;   // per stream [B, N_s, side_dim]
  std::vector<int> query_ids;        // [B, Lq]
  std::vector<int> answer_ids;       // [B, La]
  std::size_t query_len = 0;
  std::size_t answer_len = 0;
};

/// Throws ShapeError when episodes disagree on any extent.
EpisodeBatch collate(std::span<const Episode> episodes);

/// [visual | extra | query | answer[:-1]] embeddings, [B, S, d].
/// visual: [B, K, M, d]; extra: [B, N, d] or undefined.
Tensor assemble_sequence(const ToyVideoLLM& model, const Tensor& visual, const Tensor& extra,
                         const EpisodeBatch& batch);

/// Per-position targets and loss mask for a sequence whose prefix before the
/// query has `prefix_len` tokens: position prefix + Lq - 1 + i predicts answer i.
struct SequenceTargets {
  std::size_t seq_len = 0;
  std::vector<int> targets;          // [B * S]
  std::vector<std::uint8_t> mask;    // [B * S]
};
SequenceTargets sequence_targets(const EpisodeBatch& batch, std::size_t prefix_len);

}  // namespace pave
