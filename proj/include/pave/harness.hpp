// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers on top of train(): the fusion-variant comparison, patch
// stacking, and attention-map export.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pave/config.hpp"
#include "pave/costing.hpp"
#include "pave/grad_check.hpp"
#include "pave/train.hpp"

namespace pave {

enum class AblationMode { FT, Interleave, PaveVisual, PaveLearnable };

std::string to_string(AblationMode mode);
/// "ft", "interleave", "pave-visual", "pave-learnable". Throws ConfigError.
AblationMode parse_ablation_mode(const std::string& name);
inline constexpr AblationMode kAllAblationModes[] = {AblationMode::FT, AblationMode::Interleave,
                                                     AblationMode::PaveVisual, AblationMode::PaveLearnable};

/// Shared knobs of one comparison: every mode gets the same task, budget,
/// patch shape, LoRA and seed.
struct ExperimentSpec {
  TaskSpec task;
  TrainSpec train;
  PatchConfig patch;
  LoraSpec lora;
  std::uint64_t seed = 1;
};

/// Seed = train.seed.
ExperimentSpec experiment_from(const RunConfig& config);

/// Untrained stage for `mode` reading stream `stream` of `task`. FT is LoRA
/// only; Interleave adds a side projection whose outputs join the LLM input.
Stage make_stage(AblationMode mode, const ToyVideoLLM& base, const ExperimentSpec& spec, std::size_t stream = 0,
                 std::string name = "");

/// Closed-form cost of a stage on the toy model for one episode of `task`.
CostQuery toy_cost_query(const ToyVideoLLM& base, const TaskSpec& task, const Stage& stage);

struct AblationRow {
  AblationMode mode = AblationMode::FT;
  EvalResult eval;
  std::size_t trainable_params = 0;
  std::size_t total_params = 0;
  std::size_t llm_tokens = 0;
  std::uint64_t modeled_flops = 0;
  bool base_unchanged = false;
  std::vector<MetricRecord> history;
};

struct AblationReport {
  TaskKind task = TaskKind::SideCopy;
  double chance = 0.0;
  std::vector<AblationRow> rows;
  const AblationRow* find(AblationMode mode) const;
  /// One key=value line per mode.
  std::string to_text() const;
};

AblationRow run_ablation(AblationMode mode, const ToyVideoLLM& base, const ExperimentSpec& spec);
AblationReport run_ablation(std::span<const AblationMode> modes, const ToyVideoLLM& base,
                            const ExperimentSpec& spec);

/// Training budget of the stacking experiment: patch A on DenseEvent, then
/// patch B on Joint.
struct StackBudget {
  std::size_t a_episodes = 10240;
  std::size_t b_episodes = 10240;
  std::size_t batch_size = 32;
  double a_lr = 3e-3;
  double b_lr = 6e-3;

  /// `spec` with the DenseEvent settings for patch A.
  ExperimentSpec patch_a(ExperimentSpec spec) const;
  /// `spec` with the Joint settings for patch B.
  ExperimentSpec patch_b(ExperimentSpec spec) const;
};

struct StackResult {
  Stage patch_b;
  double combined_accuracy = 0.0;
  /// Patch A alone, as shipped, on the new task.
  double a_only_accuracy = 0.0;
  /// Patch B of the stacked model with patch A switched off.
  double b_only_accuracy = 0.0;
  std::uint64_t a_hash_before = 0, a_hash_after = 0;
  std::uint64_t base_hash_before = 0, base_hash_after = 0;
  std::vector<MetricRecord> history;
  std::string to_text() const;
};

/// Freezes `patch_a` (and its LoRA) and trains a new patch with a fresh LoRA
/// on stream `stream_b` of `task` while both patches are active. Throws
/// ConfigError when patch A was built for another base model or its side
/// stream in `task` has a different shape.
StackResult stack_patch(const ToyVideoLLM& base, const Stage& patch_a, const ExperimentSpec& spec,
                        std::size_t stream_b);

/// Head-averaged cross-attention of one frame: queries x G slots.
struct AttentionMap {
  std::size_t layer = 0, frame = 0;
  std::size_t queries = 0, slots = 0;
  /// Side-token index per slot, -1 when padded.
  std::vector<std::ptrdiff_t> slot_tokens;
  std::vector<double> scores;  // [queries, slots]
  double at(std::size_t q, std::size_t s) const { return scores[q * slots + s]; }
  /// Header line, then one row of scores per query.
  std::string to_text() const;
};

/// Throws std::out_of_range for a bad layer or frame and ConfigError when the
/// stage carries no patch.
AttentionMap dump_attention(const Stage& stage, const Episode& episode, std::size_t layer, std::size_t frame);

/// Width-16 model with one PAVE stage whose gate and LoRA B start away from
/// zero, so every trainable tensor receives gradient.
RunConfig grad_check_config();

/// Finite-difference check of the NLL over every patch and LoRA tensor of a
/// single-stage model built from `config`. Gradients below `denom_floor` are
/// compared in absolute terms.
GradCheckResult check_pipeline_gradients(const RunConfig& config, double denom_floor = 1e-5,
                                         std::size_t n_episodes = 2);

}  // namespace pave
