// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/costing.hpp"

#include <sstream>

#include "pave/alignment.hpp"
#include "pave/errors.hpp"

namespace pave {

LlmDims llm_preset(const std::string& name) {
  if (name == "qwen2-7b") return {name, 3584, 28, 28, 18944, 152064};
  if (name == "qwen2-0.5b") return {name, 896, 24, 14, 4864, 151936};
  throw ConfigError("unknown LLM preset '" + name + "' (expected qwen2-7b or qwen2-0.5b)");
}

LlmDims llm_dims(const ModelConfig& c) {
  return {"toy", c.d, c.n_lm_layers, c.n_lm_heads, c.d_ff, c.vocab_size};
}

CostSetting cost_setting(const std::string& name) {
  if (name == "audio") return {name, 120, 1024};
  if (name == "3d") return {name, 18432, 1024};
  if (name == "dense") return {name, 960, 1024};
  if (name == "multiview") return {name, 25088, 1152};
  throw ConfigError("unknown cost setting '" + name + "' (expected audio, 3d, dense or multiview)");
}

CostQuery make_cost_query(const LlmDims& llm, const CostSetting& setting) {
  CostQuery q;
  q.llm = llm;
  q.patch.model_dim = llm.d;
  q.patch.side_dim = setting.side_dim;
  q.n_side = setting.n_side;
  return q;
}

std::uint64_t count_patch_params(const PatchConfig& c) {
  const std::uint64_t d = c.model_dim, s = c.side_dim, h = c.hidden_dim, rh = c.mlp_ratio * c.hidden_dim;
  const std::uint64_t query = c.query_mode == QueryMode::Visual ? d * h + h : c.n_query_tokens * h;
  const std::uint64_t layer = 2 * s + 2 * h + 2 * (s * h + h) + (h * h + h) + 2 * h + (h * rh + rh) + (rh * h + h);
  const std::uint64_t adapter = (h * h + h) + (h * d + d) + 2 * d;
  return query + c.n_layers * layer + adapter;
}

std::uint64_t count_lora_params(const LoraSpec& spec, const LlmDims& llm) {
  std::uint64_t per_layer = 0;
  for (const auto& t : spec.targets) {
    if (t == "q" || t == "k" || t == "v" || t == "o") {
      per_layer += spec.rank * (llm.d + llm.d);
    } else if (t == "mlp1" || t == "mlp2") {
      per_layer += spec.rank * (llm.d + llm.d_ff);
    } else {
      throw ConfigError("unknown LoRA target '" + t + "'");
    }
  }
  return per_layer * llm.n_layers;
}

std::uint64_t count_llm_params(const LlmDims& l) {
  const std::uint64_t d = l.d;
  const std::uint64_t layer = 4 * d * d + 2 * d * l.d_ff + 4 * d;
  return 2 * l.vocab * d + l.n_layers * layer + 2 * d;
}

ParamBreakdown count_params(const CostQuery& q) {
  ParamBreakdown p;
  const auto& c = q.patch;
  const std::uint64_t d = c.model_dim, s = c.side_dim, h = c.hidden_dim;
  if (q.variant == FusionVariant::Pave) {
    p.query = c.query_mode == QueryMode::Visual ? d * h + h : c.n_query_tokens * h;
    p.adapter = (h * h + h) + (h * d + d) + 2 * d;
    p.patch = count_patch_params(c);
    p.fusion_layers = p.patch - p.query - p.adapter;
  } else if (q.variant == FusionVariant::Interleave) {
    p.interleave = s * q.llm.d + q.llm.d;
  }
  if (q.lora) p.lora = count_lora_params(*q.lora, q.llm);
  p.llm = count_llm_params(q.llm);
  p.trainable = p.patch + p.interleave + p.lora;
  p.total = p.llm + p.trainable;
  return p;
}

std::size_t llm_input_tokens(const CostQuery& q) {
  return q.n_visual + q.n_text + (q.variant == FusionVariant::Interleave ? q.n_side : 0);
}

std::uint64_t count_patch_flops(const CostQuery& q) {
  const std::uint64_t n = q.n_side;
  if (n == 0) return 0;
  const auto& c = q.patch;
  if (q.variant == FusionVariant::None) return 0;
  if (q.variant == FusionVariant::Interleave) return 2 * n * c.side_dim * q.llm.d;
  const std::uint64_t k = q.n_frames, m = q.queries_per_frame, d = c.model_dim, s = c.side_dim;
  const std::uint64_t h = c.hidden_dim, rh = c.mlp_ratio * c.hidden_dim;
  const std::uint64_t g = plan_alignment(n, q.n_frames).group_size;
  const std::uint64_t rows = k * m;
  std::uint64_t macs = c.query_mode == QueryMode::Visual ? rows * d * h : 0;
  const std::uint64_t layer = 2 * n * s * h + 2 * rows * g * h + rows * h * h + 2 * rows * h * rh;
  macs += c.n_layers * layer;
  macs += rows * (h * h + h * d);
  return 2 * macs;
}

std::uint64_t count_llm_prefill_flops(const CostQuery& q) {
  const std::uint64_t s = llm_input_tokens(q);
  const auto& l = q.llm;
  const std::uint64_t d = l.d;
  std::uint64_t macs = l.n_layers * (4 * s * d * d + 2 * s * s * d + 2 * s * d * l.d_ff) + s * d * l.vocab;
  if (q.lora && !q.lora_merged) macs += s * count_lora_params(*q.lora, l);
  return 2 * macs;
}

std::pair<double, double> overhead_ratio(const CostQuery& q) {
  const auto r = cost_report(q);
  return {r.param_ratio_pct, r.flops_ratio_pct};
}

CostReport cost_report(const CostQuery& q) {
  CostReport r;
  r.params = count_params(q);
  r.llm_tokens = llm_input_tokens(q);
  r.flops_llm_prefill = count_llm_prefill_flops(q);
  r.flops_patch = count_patch_flops(q);
  r.flops_total = r.flops_llm_prefill + r.flops_patch;
  const auto extra = r.params.patch + r.params.interleave;
  r.param_ratio_pct = r.params.total ? 100.0 * static_cast<double>(extra) / static_cast<double>(r.params.total) : 0.0;
  r.flops_ratio_pct =
      r.flops_total ? 100.0 * static_cast<double>(r.flops_patch) / static_cast<double>(r.flops_total) : 0.0;
  return r;
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "flops_convention=2*multiply_accumulate\n"
     << "params_total=" << params.total << "\n"
     << "params_trainable=" << params.trainable << "\n"
     << "params_patch_only=" << params.patch + params.interleave << "\n"
     << "params_patch_query=" << params.query << "\n"
     << "params_patch_layers=" << params.fusion_layers << "\n"
     << "params_patch_adapter=" << params.adapter << "\n"
     << "params_lora=" << params.lora << "\n"
     << "params_llm=" << params.llm << "\n"
     << "llm_input_tokens=" << llm_tokens << "\n"
     << "flops_llm_prefill=" << flops_llm_prefill << "\n"
     << "flops_patch=" << flops_patch << "\n"
     << "flops_total=" << flops_total << "\n"
     << "tflops_patch=" << static_cast<double>(flops_patch) * 1e-12 << "\n"
     << "tflops_total=" << static_cast<double>(flops_total) * 1e-12 << "\n"
     << "overhead_params_pct=" << param_ratio_pct << "\n"
     << "overhead_flops_pct=" << flops_ratio_pct << "\n";
  return os.str();
}

}  // namespace pave
