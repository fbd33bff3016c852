// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// A frozen base model plus a stack of adaptation stages, and the loop that
// trains the trainable stages with AdamW on synthetic episodes.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pave/lora.hpp"
#include "pave/model.hpp"
#include "pave/patch.hpp"
#include "pave/tasks.hpp"

namespace pave {

/// Side tokens projected to d and appended after the video tokens.
struct InterleaveProjection {
  Tensor weight;  // [d, side_dim]
  Tensor bias;    // [d]
};

/// One adaptation unit: an optional fusion patch or interleave projection
/// reading side stream `stream`, plus an optional LoRA adapter.
struct Stage {
  std::string name;
  std::optional<PavePatch> patch;
  std::optional<InterleaveProjection> interleave;
  std::optional<LoraAdapter> lora;
  std::size_t stream = 0;
  /// Side tokens per episode the stage was built for; 0 accepts any count.
  std::size_t side_tokens = 0;
  /// Fingerprint of the base model the stage was trained against.
  std::uint64_t base_fingerprint = 0;
  bool trainable = true;
  bool active = true;

  NamedTensors named_parameters() const;
  std::size_t parameter_count() const;
};

/// Patch residuals are summed onto the video tokens in stage order.
struct AdaptedModel {
  const ToyVideoLLM* base = nullptr;
  std::vector<Stage> stages;

  NamedTensors trainable_parameters() const;
  std::size_t trainable_count() const;
};

struct ForwardOutput {
  Tensor logits;  // [B, S, vocab]
  SequenceTargets targets;
  std::size_t llm_tokens = 0;
};

ForwardOutput forward_batch(const AdaptedModel& model, const EpisodeBatch& batch,
                            std::vector<FuseTrace>* traces = nullptr);

struct TrainSpec {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_fraction = 0.03;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t train_episodes = 2048;
  std::size_t eval_episodes = 512;
  std::uint64_t seed = 1;

  std::size_t steps_per_epoch() const { return (train_episodes + batch_size - 1) / batch_size; }
  std::size_t total_steps() const { return epochs * steps_per_epoch(); }
  std::size_t warmup_steps() const;
  /// Throws ConfigError.
  void validate() const;
};

/// Linear warmup to spec.lr over warmup_steps(), then cosine decay to 0.
double learning_rate(const TrainSpec& spec, std::size_t step);

class AdamW {
 public:
  AdamW(NamedTensors params, const TrainSpec& spec);
  /// Applies one update from the accumulated gradients, then clears them.
  void step(double lr);

 private:
  NamedTensors params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

struct MetricRecord {
  std::string event;  // "train_step" or "eval"
  std::size_t step = 0;
  double loss = 0.0;
  double acc = 0.0;
  std::string to_line() const;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  /// Fraction of predictions equal to the episode's visual cue (ConflictAV).
  double visual_prior_rate = 0.0;
  std::size_t episodes = 0;
};

/// Teacher-forced evaluation: an episode counts as correct when every answer
/// position's argmax (ties to the lowest id) matches.
EvalResult evaluate(const AdaptedModel& model, std::span<const Episode> episodes, std::size_t batch_size);

struct TrainResult {
  std::vector<MetricRecord> history;
  EvalResult final_eval;
  std::uint64_t base_checksum_before = 0;
  std::uint64_t base_checksum_after = 0;
  std::uint64_t frozen_checksum_before = 0;  // non-trainable stages
  std::uint64_t frozen_checksum_after = 0;
};

/// Trains every trainable stage on episodes [0, train_episodes) of `task`
/// and evaluates once per epoch on a disjoint held-out range. Throws
/// DivergenceError on a non-finite loss.
TrainResult train(AdaptedModel& model, const TaskSpec& task, const TrainSpec& spec);

/// Held-out evaluation episodes for `task` (disjoint from training indices).
std::vector<Episode> eval_episodes(const ToyVideoLLM& base, const TaskSpec& task, const TrainSpec& spec);

/// Fresh PAVE stage (patch + LoRA) for stream `stream` of `task`.
Stage make_pave_stage(const ToyVideoLLM& base, const TaskSpec& task, std::size_t stream, PatchConfig patch,
                      const LoraSpec& lora, std::uint64_t seed, std::string name = "pave");

}  // namespace pave
