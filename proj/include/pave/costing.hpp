// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter and FLOP accounting for the patch, LoRA and the
// decoder prefill. Every FLOP figure is 2 x multiply-accumulates; attention
// scores and value mixing are both counted, norms/softmax/activations are not.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "pave/lora.hpp"
#include "pave/model.hpp"
#include "pave/patch.hpp"

namespace pave {

/// Decoder dimensions. The MLP is a two-matrix d -> d_ff -> d block.
struct LlmDims {
  std::string name;
  std::size_t d = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t d_ff = 0;
  std::size_t vocab = 0;
};

/// "qwen2-7b", "qwen2-0.5b". Throws ConfigError for other names.
LlmDims llm_preset(const std::string& name);
LlmDims llm_dims(const ModelConfig& config);

/// A side-channel workload: N tokens of width side_dim.
struct CostSetting {
  std::string name;
  std::size_t n_side = 0;
  std::size_t side_dim = 0;
};

/// "audio", "3d", "dense", "multiview". Throws ConfigError otherwise.
CostSetting cost_setting(const std::string& name);

enum class FusionVariant { Pave, Interleave, None };

struct CostQuery {
  PatchConfig patch;
  std::optional<LoraSpec> lora;
  /// Merged LoRA adds no inference FLOPs.
  bool lora_merged = true;
  LlmDims llm;
  FusionVariant variant = FusionVariant::Pave;
  std::size_t n_visual = 6272;
  std::size_t n_text = 40;
  std::size_t n_side = 0;
  std::size_t n_frames = 32;
  std::size_t queries_per_frame = 196;
};

/// Default patch shape for `llm` and `setting` with no LoRA.
CostQuery make_cost_query(const LlmDims& llm, const CostSetting& setting);

struct ParamBreakdown {
  std::uint64_t query = 0;
  std::uint64_t fusion_layers = 0;
  std::uint64_t adapter = 0;
  std::uint64_t patch = 0;       // query + fusion_layers + adapter
  std::uint64_t interleave = 0;  // side projection of the interleave variant
  std::uint64_t lora = 0;
  std::uint64_t llm = 0;
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;
};

std::uint64_t count_patch_params(const PatchConfig& config);
std::uint64_t count_lora_params(const LoraSpec& spec, const LlmDims& llm);
std::uint64_t count_llm_params(const LlmDims& llm);
ParamBreakdown count_params(const CostQuery& query);

/// LLM input length: n_visual + n_text, plus N under the interleave variant.
std::size_t llm_input_tokens(const CostQuery& query);

/// Fusion FLOPs; 0 when N = 0 or the variant is None. The interleave
/// variant reports its side projection here.
std::uint64_t count_patch_flops(const CostQuery& query);
/// Decoder prefill over llm_input_tokens(query), including unmerged LoRA.
std::uint64_t count_llm_prefill_flops(const CostQuery& query);

struct CostReport {
  ParamBreakdown params;
  std::size_t llm_tokens = 0;
  std::uint64_t flops_llm_prefill = 0;
  std::uint64_t flops_patch = 0;
  std::uint64_t flops_total = 0;
  double param_ratio_pct = 0.0;
  double flops_ratio_pct = 0.0;
  /// key=value lines.
  std::string to_text() const;
};

/// Patch-only share of total parameters and FLOPs, in percent.
std::pair<double, double> overhead_ratio(const CostQuery& query);

CostReport cost_report(const CostQuery& query);

}  // namespace pave
