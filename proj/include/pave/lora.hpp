// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adaptation of frozen projection matrices.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pave/params.hpp"
#include "pave/tensor.hpp"

namespace pave {

struct LoraSpec {
  std::size_t rank = 64;
  double alpha = 16.0;
  /// Projection kinds to wrap inside every decoder layer.
  std::vector<std::string> targets{"q", "k", "v", "o", "mlp1", "mlp2"};
};

/// Delta (alpha / r) * B * A on a frozen base weight [out, in].
/// A: [r, in], fan-in scaled noise. B: [out, r], zeros at init.
struct LoraLayer {
  Tensor base_weight;
  Tensor a;
  Tensor b;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t in_features() const { return base_weight.dim(1); }
  std::size_t out_features() const { return base_weight.dim(0); }
};

/// Throws ConfigError when rank is 0 or exceeds min(in, out).
LoraLayer lora_init(const Tensor& base_weight, std::size_t rank, double alpha, std::uint64_t seed);

/// x * base^T + scaling * (x * A^T) * B^T. The base weight gets no gradient.
Tensor lora_forward(const LoraLayer& layer, const Tensor& x);

/// scaling * (x * A^T) * B^T only.
Tensor lora_delta(const LoraLayer& layer, const Tensor& x);

/// base + scaling * B * A as a fresh tensor without history.
Tensor merge_lora(const LoraLayer& layer);

/// LoRA layers keyed by the base weight's name ("layers.0.q", ...).
struct LoraAdapter {
  LoraSpec spec;
  std::map<std::string, LoraLayer> layers;

  const LoraLayer* find(const std::string& target) const;
  /// "lora.<target>.A" / "lora.<target>.B" in key order.
  NamedTensors named_parameters() const;
  std::size_t parameter_count() const;
};

}  // namespace pave
