// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container shared by patch files and full checkpoints:
//
//   "PAVE" | version u32 | config length u32 | config text |
//   entry count u32 | entries | CRC-32 of all preceding bytes
//
// Each entry is: name length u16, name, rank u8, dims u32 each, then the
// payload as little-endian float32, row-major. All integers little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pave/model.hpp"
#include "pave/params.hpp"
#include "pave/train.hpp"

namespace pave {

inline constexpr std::uint32_t kTensorFileVersion = 1;

struct TensorFile {
  std::string config;
  NamedTensors tensors;
};

std::string encode_tensor_file(const TensorFile& file);
/// Throws FormatError on bad magic, version, CRC, truncation or trailing bytes.
TensorFile decode_tensor_file(const std::string& bytes);

/// Writes to a sibling temporary file, then renames it into place.
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

/// Patch and LoRA tensors of `stage` plus a config block naming the base
/// model's fingerprint. No base weights are stored.
void save_patch(const std::filesystem::path& path, const Stage& stage, const ToyVideoLLM& base);
/// Rebuilds the stage against `base`. Throws FormatError when the file is
/// malformed, was made for another base model, or its tensors do not match
/// the declared configuration exactly. Nothing is returned on failure.
Stage load_patch(const std::filesystem::path& path, const ToyVideoLLM& base);

/// Base model, encoders and the stage's tensors in one file.
void save_checkpoint(const std::filesystem::path& path, const ToyVideoLLM& base, const Stage& stage);

}  // namespace pave
