// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/lora.hpp"

#include <algorithm>
#include <string>

#include "pave/errors.hpp"

namespace pave {

LoraLayer lora_init(const Tensor& base_weight, std::size_t rank, double alpha, std::uint64_t seed) {
  if (base_weight.rank() != 2) throw ShapeError("lora_init: base weight must be 2-D");
  const auto out = base_weight.dim(0), in = base_weight.dim(1);
  if (rank == 0 || rank > std::min(in, out)) {
    throw ConfigError("lora_init: rank " + std::to_string(rank) + " must be in [1, " +
                      std::to_string(std::min(in, out)) + "]");
  }
  Rng rng(seed);
  LoraLayer layer;
  layer.base_weight = base_weight;
  layer.a = init_fan_in(rank, in, rng, true);
  layer.b = Tensor::zeros({out, rank}, true);
  layer.rank = rank;
  layer.alpha = alpha;
  return layer;
}

Tensor lora_delta(const LoraLayer& layer, const Tensor& x) {
  return scale(linear(linear(x, layer.a), layer.b), layer.scaling());
}

Tensor lora_forward(const LoraLayer& layer, const Tensor& x) {
  return add(linear(x, layer.base_weight), lora_delta(layer, x));
}

Tensor merge_lora(const LoraLayer& layer) {
  const auto out = layer.out_features(), in = layer.in_features(), r = layer.rank;
  std::vector<double> merged(layer.base_weight.data().begin(), layer.base_weight.data().end());
  const auto& a = layer.a.data();
  const auto& b = layer.b.data();
  const double s = layer.scaling();
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t j = 0; j < in; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < r; ++p) acc += b[i * r + p] * a[p * in + j];
      merged[i * in + j] += s * acc;
    }
  return Tensor::from_data({out, in}, std::move(merged));
}

const LoraLayer* LoraAdapter::find(const std::string& target) const {
  auto it = layers.find(target);
  return it == layers.end() ? nullptr : &it->second;
}

NamedTensors LoraAdapter::named_parameters() const {
  NamedTensors out;
  for (const auto& [name, layer] : layers) {
    out.emplace_back("lora." + name + ".A", layer.a);
    out.emplace_back("lora." + name + ".B", layer.b);
  }
  return out;
}

std::size_t LoraAdapter::parameter_count() const { return total_numel(named_parameters()); }

}  // namespace pave
