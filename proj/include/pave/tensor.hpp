// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense tensor with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node holding a row-major float64
// buffer. Ops record their inputs and a backward closure whenever any input
// requires a gradient. Tensor::backward() on a scalar walks the recorded
// graph in reverse topological order. Leaf gradients accumulate across
// backward calls until zero_grad(); intermediate gradients are reset at the
// start of each call.
//
// Buffers consumed by an op must not be mutated before that graph's backward
// has run. The only sanctioned in-place path is mutable_data() on leaf
// parameters between optimizer steps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pave/rng.hpp"

namespace pave {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);
  static Tensor normal(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Populate gradients of every requires_grad tensor reachable from this
  /// scalar. Throws ShapeError for non-scalar tensors.
  void backward() const;

  /// Same values, no history, new storage.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  /// Graph plumbing for op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Multiply-accumulate instrumentation
// ---------------------------------------------------------------------------

/// Counts forward-pass multiply-accumulates issued by matmul-class ops
/// (matmul, linear, attention scores and value mixing) while alive.
/// Elementwise work, norms and softmax are not counted.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const;

 private:
  std::uint64_t start_;
};

namespace detail {
void add_macs(std::uint64_t n);
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// a[m,k] x b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[out, in]^T (+ bias[out])
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// tanh-approximation GELU.
Tensor gelu(const Tensor& x);

/// Normalizes over the last axis then applies gamma, beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Softmax along `axis`. -inf entries map to exactly 0. A line whose every
/// entry is -inf yields all zeros; the number of such lines is written to
/// `dead_lines` when given.
Tensor softmax(const Tensor& x, std::size_t axis, std::size_t* dead_lines = nullptr);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Rows of a 2-D tensor by index; index -1 produces a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::ptrdiff_t> rows);

/// Per-row rotation angles for rotate_pairs: cos/sin are [rows, pairs].
struct RotationTable {
  std::size_t rows = 0;
  std::size_t pairs = 0;
  std::vector<double> cos;
  std::vector<double> sin;
};

/// x[rows, heads * 2 * pairs]: every head's lanes (2i, 2i+1) rotated by the
/// row's angle i. Linear in x; the gradient is the inverse rotation.
Tensor rotate_pairs(const Tensor& x, std::shared_ptr<const RotationTable> table,
                    std::size_t heads);

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  /// [batch * k_len] validity, or null for all keys valid.
  std::shared_ptr<const std::vector<std::uint8_t>> key_valid;
  /// When set, receives post-softmax probabilities [batch, heads, q_len, k_len].
  std::vector<double>* probs_out = nullptr;
  /// When set, receives the count of fully masked query rows.
  std::size_t* dead_rows = nullptr;
};

/// Multi-head scaled dot-product attention. q: [batch, q_len, width],
/// k/v: [batch, k_len, width], width = heads * head_dim. Fully masked query
/// rows attend to nothing and output zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionOptions& options);

/// Mean over rows with mask != 0 of -log softmax(logits[row])[target[row]].
/// logits: [..., vocab] viewed as rows. Throws std::invalid_argument if the
/// mask selects no row.
Tensor nll_loss(const Tensor& logits, std::span<const int> targets,
                std::span<const std::uint8_t> mask);

}  // namespace pave
