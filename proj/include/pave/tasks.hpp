// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic side-channel tasks. Raw features are drawn per episode and pushed
// through the model's frozen encoders, so episodes are model-specific.
//
// Vocabulary layout: ids [0, n_classes) are answers; the ids after them are
// query markers.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pave/model.hpp"
#include "pave/patch.hpp"

namespace pave {

enum class TaskKind { SideCopy, DenseEvent, ConflictAV, MultiView, Joint };

std::string to_string(TaskKind kind);
/// Throws ConfigError for unknown names.
TaskKind parse_task_kind(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::SideCopy;
  std::uint64_t seed = 1;
  /// Seeds the class prototypes shared by every task of one "world".
  std::uint64_t world_seed = 2026;
  std::size_t n_classes = 8;
  /// Side tokens per episode for SideCopy / ConflictAV / MultiView.
  std::size_t n_side = 16;
  /// Dense frames per key frame for DenseEvent (N = K * dense_rate).
  std::size_t dense_rate = 4;
  double noise = 0.1;
  /// Blend weight of a visual cue into its frame's raw features.
  double visual_strength = 1.0;
};

namespace vocab {
inline constexpr int kQuerySide = 0;   // offsets past n_classes
inline constexpr int kQueryDense = 1;
inline constexpr int kQueryConflict = 2;
inline constexpr int kQueryView = 3;
inline constexpr int kSep = 4;
inline constexpr int kCount = 5;
}  // namespace vocab

/// Side streams for `kind`: Joint has two (dense, then audio-like).
std::size_t stream_count(TaskKind kind);
/// Side tokens in stream `s` of `kind` for a model with K frames.
std::size_t stream_length(const TaskSpec& spec, std::size_t n_frames, std::size_t stream);
std::size_t answer_length(TaskKind kind);

/// Throws ConfigError when the model vocabulary or widths cannot host the task.
void validate_task(const TaskSpec& spec, const ModelConfig& model);

/// Episodes first_index .. first_index + n - 1 of the task's stream; each
/// episode depends only on (spec, index). Throws std::invalid_argument for n == 0.
std::vector<Episode> gen_episodes(const ToyVideoLLM& model, const TaskSpec& spec, std::size_t n,
                                  std::size_t first_index = 0);

/// gen_episodes split into batches of at most batch_size.
std::vector<EpisodeBatch> gen_task(const ToyVideoLLM& model, const TaskSpec& spec, std::size_t n,
                                   std::size_t batch_size, std::size_t first_index = 0);

/// Copy with every side token set to zero.
Episode without_side(const Episode& episode);

/// Patch config that reads stream `stream` of `spec` for `model`.
PatchConfig patch_config_for(const ModelConfig& model, const TaskSpec& spec, std::size_t stream,
                             PatchConfig base);

}  // namespace pave
