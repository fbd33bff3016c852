// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/params.hpp"

#include <cmath>
#include <cstring>

namespace pave {

Tensor init_fan_in(std::size_t out, std::size_t in, Rng& rng, bool requires_grad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Tensor::uniform({out, in}, -bound, bound, rng, requires_grad);
}

std::size_t total_numel(const NamedTensors& tensors) {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

namespace {
void fnv(std::uint64_t& h, const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}
}  // namespace

std::uint64_t checksum(const NamedTensors& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    fnv(h, name.data(), name.size());
    for (auto d : t.shape()) {
      const std::uint64_t v = d;
      fnv(h, &v, sizeof v);
    }
    fnv(h, t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

void set_requires_grad(NamedTensors& tensors, bool on) {
  for (auto& [name, t] : tensors) t.set_requires_grad(on);
}

}  // namespace pave
