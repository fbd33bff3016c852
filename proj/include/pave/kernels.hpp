// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels behind tensor_core.
//
// Every kernel exists twice: a plain serial reference (`serial::`) and an
// OpenMP version (`omp::`) that reorders loops for vectorization and splits
// work over independent output rows or (batch, head) pairs. Each output
// element is reduced in the same order on both paths, so the two agree
// bit for bit for any thread count. The un-namespaced entry points dispatch
// to `omp::` when OpenMP is compiled in and the problem is large enough.

#pragma once

#include <cstddef>
#include <cstdint>

namespace pave::kernels {

struct AttentionDims {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  bool causal = false;
  double scale = 1.0;
};

// q: [batch, q_len, heads*head_dim]; k, v: [batch, k_len, heads*head_dim];
// key_valid: [batch, k_len] or null (all valid); probs: [batch, heads, q_len, k_len].
// A query row whose every key is masked gets an all-zero probability row.
// Returns the number of such rows.

namespace serial {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
std::size_t attention_forward(const AttentionDims& dims, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs);
void attention_backward(const AttentionDims& dims, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv);
}  // namespace serial

namespace omp {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
std::size_t attention_forward(const AttentionDims& dims, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs);
void attention_backward(const AttentionDims& dims, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv);
}  // namespace omp

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
/// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
/// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate = false);
std::size_t attention_forward(const AttentionDims& dims, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs);
/// Gradients are accumulated into dq, dk, dv.
void attention_backward(const AttentionDims& dims, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv);

/// Row-wise layer norm over the last axis. Stores normalized values and
/// reciprocal std for the backward pass.
void layer_norm_forward(std::size_t rows, std::size_t width, const double* x, const double* gamma,
                        const double* beta, double eps, double* y, double* xhat, double* rstd);

/// Rotate adjacent lane pairs (2i, 2i+1) of each head by per-row angles.
/// cos/sin: [rows, pairs] with pairs = head_dim / 2. `inverse` rotates by -angle.
void rotate_pairs(std::size_t rows, std::size_t heads, std::size_t pairs, const double* x,
                  const double* cos, const double* sin, bool inverse, double* y);

/// True when the OpenMP path is compiled in.
bool openmp_enabled();
/// Thread count the OpenMP path would use (1 without OpenMP).
int max_threads();

}  // namespace pave::kernels
