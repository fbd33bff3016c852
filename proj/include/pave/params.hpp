// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pave/rng.hpp"
#include "pave/tensor.hpp"

namespace pave {

/// Ordered (name, tensor) pairs; order is part of every file format.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight of shape [out, in].
Tensor init_fan_in(std::size_t out, std::size_t in, Rng& rng, bool requires_grad);

std::size_t total_numel(const NamedTensors& tensors);

/// FNV-1a over names, shapes and raw value bytes.
std::uint64_t checksum(const NamedTensors& tensors);

void set_requires_grad(NamedTensors& tensors, bool on);

}  // namespace pave
