// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against the OpenMP kernels on training-sized
// problems. Prints one line per kernel with both timings and whether the
// outputs agree bit for bit.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "pave/kernels.hpp"
#include "pave/rng.hpp"

using namespace pave;
namespace k = pave::kernels;

namespace {

std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double seconds(const std::function<void()>& fn, int reps) {
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const std::string& name, double serial, double parallel, bool identical) {
  std::printf("kernel=%-18s serial_ms=%9.3f omp_ms=%9.3f speedup=%5.2f identical=%d\n", name.c_str(),
              serial * 1e3, parallel * 1e3, serial / parallel, identical ? 1 : 0);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 20;
  std::printf("openmp=%d threads=%d reps=%d\n", k::openmp_enabled() ? 1 : 0, k::max_threads(), reps);
  Rng rng(42);
  bool all_identical = true;

  const std::size_t m = 1104, n = 64, kk = 256;
  const auto a = noise(m * kk, rng), b = noise(kk * n, rng), bt = noise(n * kk, rng), at = noise(kk * m, rng);
  struct Gemm {
    const char* name;
    void (*serial)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
    void (*omp)(std::size_t, std::size_t, std::size_t, const double*, const double*, double*, bool);
    const double* a;
    const double* b;
  };
  const Gemm gemms[] = {
      {"gemm_nn", k::serial::gemm_nn, k::omp::gemm_nn, a.data(), b.data()},
      {"gemm_nt", k::serial::gemm_nt, k::omp::gemm_nt, a.data(), bt.data()},
      {"gemm_tn", k::serial::gemm_tn, k::omp::gemm_tn, at.data(), b.data()},
  };
  for (const auto& g : gemms) {
    std::vector<double> cs(m * n), co(m * n);
    const double ts = seconds([&] { g.serial(m, n, kk, g.a, g.b, cs.data(), false); }, reps);
    const double to = seconds([&] { g.omp(m, n, kk, g.a, g.b, co.data(), false); }, reps);
    const bool id = same(cs, co);
    all_identical = all_identical && id;
    report(g.name, ts, to, id);
  }

  k::AttentionDims dims;
  dims.batch = 8;
  dims.q_len = 138;
  dims.k_len = 138;
  dims.heads = 4;
  dims.head_dim = 16;
  dims.causal = true;
  dims.scale = 0.25;
  const auto width = dims.heads * dims.head_dim;
  const auto q = noise(dims.batch * dims.q_len * width, rng), kv = noise(dims.batch * dims.k_len * width, rng),
             v = noise(dims.batch * dims.k_len * width, rng), dout = noise(q.size(), rng);
  const auto np = dims.batch * dims.heads * dims.q_len * dims.k_len;
  std::vector<double> os(q.size()), oo(q.size()), ps(np), po(np);
  const double fs = seconds([&] { k::serial::attention_forward(dims, q.data(), kv.data(), v.data(), nullptr, os.data(), ps.data()); }, reps);
  const double fo = seconds([&] { k::omp::attention_forward(dims, q.data(), kv.data(), v.data(), nullptr, oo.data(), po.data()); }, reps);
  bool id = same(os, oo) && same(ps, po);
  all_identical = all_identical && id;
  report("attention_forward", fs, fo, id);

  std::vector<double> dqs(q.size()), dks(kv.size()), dvs(v.size()), dqo(q.size()), dko(kv.size()), dvo(v.size());
  auto backward = [&](auto fn, std::vector<double>& dq, std::vector<double>& dk, std::vector<double>& dv) {
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    fn(dims, q.data(), kv.data(), v.data(), nullptr, ps.data(), dout.data(), dq.data(), dk.data(), dv.data());
  };
  const double bs = seconds([&] { backward(k::serial::attention_backward, dqs, dks, dvs); }, reps);
  const double bo = seconds([&] { backward(k::omp::attention_backward, dqo, dko, dvo); }, reps);
  id = same(dqs, dqo) && same(dks, dko) && same(dvs, dvo);
  all_identical = all_identical && id;
  report("attention_backward", bs, bo, id);

  std::printf("all_identical=%d\n", all_identical ? 1 : 0);
  return all_identical ? 0 : 1;
}
