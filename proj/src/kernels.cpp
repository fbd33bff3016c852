// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef PAVE_USE_OPENMP
#include <omp.h>
#endif

namespace pave::kernels {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1u << 15;

bool key_allowed(const AttentionDims& d, const std::uint8_t* key_valid, std::size_t b,
                 std::size_t i, std::size_t j) {
  if (key_valid != nullptr && key_valid[b * d.k_len + j] == 0) return false;
  if (d.causal && j > i) return false;
  return true;
}

// Softmax of one score row in place; masked entries must already hold -inf.
// Returns false when every entry is masked (row becomes zeros).
bool softmax_row(double* row, std::size_t n) {
  double mx = kNegInf;
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  if (mx == kNegInf) {
    std::fill(row, row + n, 0.0);
    return false;
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = (row[j] == kNegInf) ? 0.0 : std::exp(row[j] - mx);
    total += row[j];
  }
  const double inv = 1.0 / total;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference
// ---------------------------------------------------------------------------

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

std::size_t attention_forward(const AttentionDims& d, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs) {
  const std::size_t width = d.heads * d.head_dim;
  std::size_t dead_rows = 0;
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      for (std::size_t i = 0; i < d.q_len; ++i) {
        double* p = probs + ((b * d.heads + h) * d.q_len + i) * d.k_len;
        const double* qi = q + (b * d.q_len + i) * width + h * d.head_dim;
        for (std::size_t j = 0; j < d.k_len; ++j) {
          const double* kj = k + (b * d.k_len + j) * width + h * d.head_dim;
          double s = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) s += qi[e] * kj[e];
          p[j] = key_allowed(d, key_valid, b, i, j) ? s * d.scale : kNegInf;
        }
        if (!softmax_row(p, d.k_len)) ++dead_rows;
        double* oi = out + (b * d.q_len + i) * width + h * d.head_dim;
        for (std::size_t e = 0; e < d.head_dim; ++e) {
          double acc = 0.0;
          for (std::size_t j = 0; j < d.k_len; ++j) {
            if (!key_allowed(d, key_valid, b, i, j)) continue;
            acc += p[j] * v[(b * d.k_len + j) * width + h * d.head_dim + e];
          }
          oi[e] = acc;
        }
      }
    }
  }
  return dead_rows;
}

void attention_backward(const AttentionDims& d, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv) {
  const std::size_t width = d.heads * d.head_dim;
  std::vector<double> dp(d.k_len);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      for (std::size_t i = 0; i < d.q_len; ++i) {
        const double* p = probs + ((b * d.heads + h) * d.q_len + i) * d.k_len;
        const double* doi = d_out + (b * d.q_len + i) * width + h * d.head_dim;
        const double* qi = q + (b * d.q_len + i) * width + h * d.head_dim;
        double* dqi = dq + (b * d.q_len + i) * width + h * d.head_dim;
        double dot = 0.0;
        for (std::size_t j = 0; j < d.k_len; ++j) {
          dp[j] = 0.0;
          if (!key_allowed(d, key_valid, b, i, j)) continue;
          const double* vj = v + (b * d.k_len + j) * width + h * d.head_dim;
          double s = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) s += doi[e] * vj[e];
          dp[j] = s;
          dot += p[j] * s;
        }
        for (std::size_t j = 0; j < d.k_len; ++j) {
          if (!key_allowed(d, key_valid, b, i, j)) continue;
          const double ds = p[j] * (dp[j] - dot) * d.scale;
          const double* kj = k + (b * d.k_len + j) * width + h * d.head_dim;
          double* dkj = dk + (b * d.k_len + j) * width + h * d.head_dim;
          double* dvj = dv + (b * d.k_len + j) * width + h * d.head_dim;
          for (std::size_t e = 0; e < d.head_dim; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
            dvj[e] += p[j] * doi[e];
          }
        }
      }
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP
// ---------------------------------------------------------------------------

namespace omp {

namespace {

// C[m,n] (+)= A * B with A(i, p) = a[i * ars + p * acs]. Rows are handled four
// at a time so each loaded row of B feeds four outputs; every C element still
// accumulates over p in ascending order.
void gemm_rows(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t ars,
               std::size_t acs, const double* b, double* c, bool accumulate) {
  const long blocks = static_cast<long>((m + 3) / 4);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelThreshold)
  for (long bi = 0; bi < blocks; ++bi) {
    const auto i0 = static_cast<std::size_t>(bi) * 4;
    const auto rows = std::min<std::size_t>(4, m - i0);
    if (!accumulate) std::fill(c + i0 * n, c + (i0 + rows) * n, 0.0);
    if (rows == 4) {
      double* __restrict c0 = c + i0 * n;
      double* __restrict c1 = c0 + n;
      double* __restrict c2 = c1 + n;
      double* __restrict c3 = c2 + n;
      for (std::size_t p = 0; p < k; ++p) {
        const double a0 = a[i0 * ars + p * acs];
        const double a1 = a[(i0 + 1) * ars + p * acs];
        const double a2 = a[(i0 + 2) * ars + p * acs];
        const double a3 = a[(i0 + 3) * ars + p * acs];
        const double* __restrict bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double bj = bp[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        double* ci = c + (i0 + r) * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a[(i0 + r) * ars + p * acs];
          const double* bp = b + p * n;
          for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  gemm_rows(m, n, k, a, k, 1, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  // Transpose B once so the inner loop runs over contiguous output lanes.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  gemm_rows(m, n, k, a, 1, m, b, c, accumulate);
}

std::size_t attention_forward(const AttentionDims& d, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs) {
  const std::size_t width = d.heads * d.head_dim;
  const long pairs = static_cast<long>(d.batch * d.heads);
  std::size_t dead_rows = 0;
#pragma omp parallel reduction(+ : dead_rows) if (d.batch * d.heads * d.q_len * d.k_len * d.head_dim >= kParallelThreshold)
  {
    std::vector<double> kt(d.head_dim * d.k_len);
    std::vector<double> vh(d.k_len * d.head_dim);
#pragma omp for schedule(static)
    for (long bh = 0; bh < pairs; ++bh) {
      const std::size_t b = static_cast<std::size_t>(bh) / d.heads;
      const std::size_t h = static_cast<std::size_t>(bh) % d.heads;
      for (std::size_t j = 0; j < d.k_len; ++j) {
        const double* kj = k + (b * d.k_len + j) * width + h * d.head_dim;
        const double* vj = v + (b * d.k_len + j) * width + h * d.head_dim;
        for (std::size_t e = 0; e < d.head_dim; ++e) {
          kt[e * d.k_len + j] = kj[e];
          vh[j * d.head_dim + e] = vj[e];
        }
      }
      for (std::size_t i = 0; i < d.q_len; ++i) {
        double* p = probs + ((b * d.heads + h) * d.q_len + i) * d.k_len;
        const double* qi = q + (b * d.q_len + i) * width + h * d.head_dim;
        std::fill(p, p + d.k_len, 0.0);
        for (std::size_t e = 0; e < d.head_dim; ++e) {
          const double qe = qi[e];
          const double* ke = kt.data() + e * d.k_len;
          for (std::size_t j = 0; j < d.k_len; ++j) p[j] += qe * ke[j];
        }
        for (std::size_t j = 0; j < d.k_len; ++j)
          p[j] = key_allowed(d, key_valid, b, i, j) ? p[j] * d.scale : kNegInf;
        if (!softmax_row(p, d.k_len)) ++dead_rows;
        double* oi = out + (b * d.q_len + i) * width + h * d.head_dim;
        std::fill(oi, oi + d.head_dim, 0.0);
        for (std::size_t j = 0; j < d.k_len; ++j) {
          if (!key_allowed(d, key_valid, b, i, j)) continue;
          const double pj = p[j];
          const double* vj = vh.data() + j * d.head_dim;
          for (std::size_t e = 0; e < d.head_dim; ++e) oi[e] += pj * vj[e];
        }
      }
    }
  }
  return dead_rows;
}

void attention_backward(const AttentionDims& d, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv) {
  const std::size_t width = d.heads * d.head_dim;
  const long pairs = static_cast<long>(d.batch * d.heads);
#pragma omp parallel if (d.batch * d.heads * d.q_len * d.k_len * d.head_dim >= kParallelThreshold)
  {
    std::vector<double> dp(d.k_len);
#pragma omp for schedule(static)
    for (long bh = 0; bh < pairs; ++bh) {
      const std::size_t b = static_cast<std::size_t>(bh) / d.heads;
      const std::size_t h = static_cast<std::size_t>(bh) % d.heads;
      for (std::size_t i = 0; i < d.q_len; ++i) {
        const double* p = probs + ((b * d.heads + h) * d.q_len + i) * d.k_len;
        const double* doi = d_out + (b * d.q_len + i) * width + h * d.head_dim;
        const double* qi = q + (b * d.q_len + i) * width + h * d.head_dim;
        double* dqi = dq + (b * d.q_len + i) * width + h * d.head_dim;
        double dot = 0.0;
        for (std::size_t j = 0; j < d.k_len; ++j) {
          dp[j] = 0.0;
          if (!key_allowed(d, key_valid, b, i, j)) continue;
          const double* vj = v + (b * d.k_len + j) * width + h * d.head_dim;
          double s = 0.0;
          for (std::size_t e = 0; e < d.head_dim; ++e) s += doi[e] * vj[e];
          dp[j] = s;
          dot += p[j] * s;
        }
        for (std::size_t j = 0; j < d.k_len; ++j) {
          if (!key_allowed(d, key_valid, b, i, j)) continue;
          const double ds = p[j] * (dp[j] - dot) * d.scale;
          const double pj = p[j];
          const double* kj = k + (b * d.k_len + j) * width + h * d.head_dim;
          double* dkj = dk + (b * d.k_len + j) * width + h * d.head_dim;
          double* dvj = dv + (b * d.k_len + j) * width + h * d.head_dim;
          for (std::size_t e = 0; e < d.head_dim; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
            dvj[e] += pj * doi[e];
          }
        }
      }
    }
  }
}

}  // namespace omp

// ---------------------------------------------------------------------------
// Dispatch and single-path kernels
//
// The omp:: variants double as the fast single-thread path (loop order), and
// their `if` clauses keep small problems on one thread.
// ---------------------------------------------------------------------------

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  omp::gemm_nn(m, n, k, a, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  omp::gemm_nt(m, n, k, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  omp::gemm_tn(m, n, k, a, b, c, accumulate);
}

std::size_t attention_forward(const AttentionDims& dims, const double* q, const double* k,
                              const double* v, const std::uint8_t* key_valid, double* out,
                              double* probs) {
  return omp::attention_forward(dims, q, k, v, key_valid, out, probs);
}

void attention_backward(const AttentionDims& dims, const double* q, const double* k,
                        const double* v, const std::uint8_t* key_valid, const double* probs,
                        const double* d_out, double* dq, double* dk, double* dv) {
  omp::attention_backward(dims, q, k, v, key_valid, probs, d_out, dq, dk, dv);
}

void layer_norm_forward(std::size_t rows, std::size_t width, const double* x, const double* gamma,
                        const double* beta, double eps, double* y, double* xhat, double* rstd) {
  const long n = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * width >= kParallelThreshold)
  for (long rr = 0; rr < n; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const double* xr = x + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += xr[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (xr[j] - mean) * inv;
      xhat[r * width + j] = h;
      y[r * width + j] = h * gamma[j] + beta[j];
    }
  }
}

void rotate_pairs(std::size_t rows, std::size_t heads, std::size_t pairs, const double* x,
                  const double* cos, const double* sin, bool inverse, double* y) {
  const std::size_t width = heads * pairs * 2;
  const long n = static_cast<long>(rows);
  const double sign = inverse ? -1.0 : 1.0;
#pragma omp parallel for schedule(static) if (rows * width >= kParallelThreshold)
  for (long rr = 0; rr < n; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* xr = x + r * width + h * pairs * 2;
      double* yr = y + r * width + h * pairs * 2;
      for (std::size_t i = 0; i < pairs; ++i) {
        const double c = cos[r * pairs + i];
        const double s = sign * sin[r * pairs + i];
        const double x0 = xr[2 * i];
        const double x1 = xr[2 * i + 1];
        yr[2 * i] = x0 * c - x1 * s;
        yr[2 * i + 1] = x0 * s + x1 * c;
      }
    }
  }
}

bool openmp_enabled() {
#ifdef PAVE_USE_OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef PAVE_USE_OPENMP
  static const int n = omp_get_max_threads();
  return n;
#else
  return 1;
#endif
}

}  // namespace pave::kernels
