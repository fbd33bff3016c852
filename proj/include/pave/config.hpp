// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration. Lines starting with '#' and blank
// lines are ignored; a '#' after a value starts a comment. Unknown keys,
// repeated keys and malformed values are errors.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pave/lora.hpp"
#include "pave/model.hpp"
#include "pave/patch.hpp"
#include "pave/tasks.hpp"
#include "pave/train.hpp"

namespace pave {

struct RunConfig {
  ModelConfig model;
  PatchConfig patch;
  LoraSpec lora;
  TrainSpec train;
  TaskSpec task;

  /// Every key, in a stable order; parse_config(to_text()) round-trips.
  std::string to_text() const;
  /// Only the keys whose prefix is listed (e.g. {"patch.", "lora."}).
  std::string to_text(const std::vector<std::string>& prefixes) const;
};

/// Toy-scale defaults used by the CLI and the test suites.
RunConfig default_run_config();

/// Applies `text` on top of `base`. Throws ConfigError naming the line.
RunConfig parse_config(std::string_view text, RunConfig base = default_run_config());
/// Throws ConfigError when the file cannot be read.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = default_run_config());

/// Sets one key. Throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Keys known to the parser.
std::vector<std::string> config_keys();

}  // namespace pave
