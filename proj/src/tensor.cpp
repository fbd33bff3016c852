// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pave/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "pave/errors.hpp"
#include "pave/kernels.hpp"

namespace pave {

using detail::Node;

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != data.size()) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel_of(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return from_data(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("dim: axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at: index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("at: index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS over nodes that carry gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p != nullptr && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->data.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------------------
// MAC counter
// ---------------------------------------------------------------------------

namespace {
std::atomic<std::uint64_t> g_macs{0};
std::atomic<int> g_counters{0};
}  // namespace

void detail::add_macs(std::uint64_t n) {
  if (g_counters.load(std::memory_order_relaxed) > 0) g_macs.fetch_add(n, std::memory_order_relaxed);
}

MacCounter::MacCounter() : start_(g_macs.load()) { g_counters.fetch_add(1); }
MacCounter::~MacCounter() { g_counters.fetch_sub(1); }
std::uint64_t MacCounter::count() const { return g_macs.load() - start_; }

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& t : inputs) node->parents.push_back(t.defined() ? t.node() : nullptr);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

// Parent slot accessor for backward closures; null when no gradient needed.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  const auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

const std::vector<double>& data_of(Node& self, std::size_t i) { return self.parents[i]->data; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::size_t last_dim(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": tensor must have rank >= 1");
  return t.shape().back();
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = data_of(self, 0);
    const auto& bv = data_of(self, 1);
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto n = last_dim(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto rows = x.numel() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias.data()[j];
  return make_result(x.shape(), std::move(out), {x, bias}, [rows, n](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = grad_of(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[r * n + j];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  detail::add_macs(static_cast<std::uint64_t>(m) * n * k);
  return make_result({m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    const auto& av = data_of(self, 0);
    const auto& bv = data_of(self, 1);
    if (auto* g = grad_of(self, 0)) kernels::gemm_nt(m, k, n, self.grad.data(), bv.data(), g->data(), true);
    if (auto* g = grad_of(self, 1)) kernels::gemm_tn(k, n, m, av.data(), self.grad.data(), g->data(), true);
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto in = last_dim(x, "linear");
  if (weight.rank() != 2 || weight.dim(1) != in) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " cannot consume " +
                     shape_str(x.shape()));
  }
  const auto out_dim = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const auto rows = x.numel() / in;
  std::vector<double> out(rows * out_dim);
  kernels::gemm_nt(rows, out_dim, in, x.data().data(), weight.data().data(), out.data());
  detail::add_macs(static_cast<std::uint64_t>(rows) * in * out_dim);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bias.data()[j];
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  return make_result(std::move(shape), std::move(out), {x, weight, bias},
                     [rows, in, out_dim](Node& self) {
                       const auto& xv = data_of(self, 0);
                       const auto& wv = data_of(self, 1);
                       const double* g = self.grad.data();
                       if (auto* gx = grad_of(self, 0))
                         kernels::gemm_nn(rows, in, out_dim, g, wv.data(), gx->data(), true);
                       if (auto* gw = grad_of(self, 1))
                         kernels::gemm_tn(out_dim, in, rows, g, xv.data(), gw->data(), true);
                       if (self.parents[2]) {
                         if (auto* gb = grad_of(self, 2))
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g[r * out_dim + j];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& xv = data_of(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(c * (v + a * v * v * v));
      const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      (*g)[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto width = last_dim(x, "layer_norm");
  if (gamma.rank() != 1 || gamma.dim(0) != width || beta.rank() != 1 || beta.dim(0) != width) {
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(width) + "]");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const auto rows = x.numel() / width;
  std::vector<double> out(rows * width);
  auto xhat = std::make_shared<std::vector<double>>(rows * width);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  kernels::layer_norm_forward(rows, width, x.data().data(), gamma.data().data(),
                              beta.data().data(), eps, out.data(), xhat->data(), rstd->data());
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, width, xhat, rstd](Node& self) {
                       const auto& gv = data_of(self, 1);
                       const double* g = self.grad.data();
                       if (auto* gx = grad_of(self, 0)) {
                         std::vector<double> dxh(width);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < width; ++j) {
                             dxh[j] = g[r * width + j] * gv[j];
                             m1 += dxh[j];
                             m2 += dxh[j] * (*xhat)[r * width + j];
                           }
                           m1 /= static_cast<double>(width);
                           m2 /= static_cast<double>(width);
                           for (std::size_t j = 0; j < width; ++j) {
                             (*gx)[r * width + j] +=
                                 (*rstd)[r] * (dxh[j] - m1 - (*xhat)[r * width + j] * m2);
                           }
                         }
                       }
                       if (auto* gg = grad_of(self, 1))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < width; ++j)
                             (*gg)[j] += g[r * width + j] * (*xhat)[r * width + j];
                       if (auto* gb = grad_of(self, 2))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < width; ++j) (*gb)[j] += g[r * width + j];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis, std::size_t* dead_lines) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto n = s[axis];
  std::vector<double> out(x.numel());
  std::size_t dead = 0;
  const auto& in = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = o * n * inner + c;
      double mx = kNegInf;
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
      if (mx == kNegInf) {
        ++dead;
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] = 0.0;
        continue;
      }
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = in[base + j * inner];
        const double e = (v == kNegInf) ? 0.0 : std::exp(v - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  if (dead_lines) *dead_lines = dead;
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result(x.shape(), std::move(out), {x}, [y, outer, inner, n](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = o * n * inner + c;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += (*y)[base + j * inner] * self.grad[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const auto idx = base + j * inner;
          (*g)[idx] += (*y)[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (auto* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(ref) + " and " + shape_str(s));
    total_axis += s[axis];
    chunk.push_back(s[axis] * inner);
  }
  Shape shape = ref;
  shape[axis] = total_axis;
  std::vector<double> out(numel_of(shape));
  const std::size_t row = total_axis * inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk[p]), chunk[p],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += chunk[p];
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(out);
  for (const auto& p : parts) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [chunk, outer, row](Node& self) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < chunk.size(); ++p) {
        if (auto* g = grad_of(self, p)) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < chunk[p]; ++i) (*g)[o * chunk[p] + i] += self.grad[o * row + off + i];
        }
        off += chunk[p];
      }
    };
  }
  return Tensor::wrap(std::move(node));
}

Tensor gather_rows(const Tensor& x, std::span<const std::ptrdiff_t> rows) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expected 2-D input, got " + shape_str(x.shape()));
  const auto n = x.dim(0), d = x.dim(1);
  std::vector<double> out(rows.size() * d, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0) continue;
    const auto src = static_cast<std::size_t>(rows[r]);
    if (src >= n) throw ShapeError("gather_rows: row index " + std::to_string(src) + " out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<std::ptrdiff_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), d}, std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      const auto dst = static_cast<std::size_t>(idx[r]);
      for (std::size_t j = 0; j < d; ++j) (*g)[dst * d + j] += self.grad[r * d + j];
    }
  });
}

Tensor rotate_pairs(const Tensor& x, std::shared_ptr<const RotationTable> table, std::size_t heads) {
  const auto width = last_dim(x, "rotate_pairs");
  if (heads == 0 || width != heads * 2 * table->pairs) {
    throw ShapeError("rotate_pairs: width " + std::to_string(width) + " != heads(" +
                     std::to_string(heads) + ") x 2 x pairs(" + std::to_string(table->pairs) + ")");
  }
  const auto rows = x.numel() / width;
  if (rows != table->rows) {
    throw ShapeError("rotate_pairs: " + std::to_string(rows) + " rows but table has " +
                     std::to_string(table->rows));
  }
  std::vector<double> out(x.numel());
  kernels::rotate_pairs(rows, heads, table->pairs, x.data().data(), table->cos.data(),
                        table->sin.data(), false, out.data());
  return make_result(x.shape(), std::move(out), {x}, [table, heads, rows](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    std::vector<double> back(self.grad.size());
    kernels::rotate_pairs(rows, heads, table->pairs, self.grad.data(), table->cos.data(),
                          table->sin.data(), true, back.data());
    for (std::size_t i = 0; i < back.size(); ++i) (*g)[i] += back[i];
  });
}

// ---------------------------------------------------------------------------
// Attention and loss
// ---------------------------------------------------------------------------

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opt) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("attention: q, k, v must be [batch, len, width]");
  }
  if (k.shape() != v.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const auto width = q.dim(2);
  if (opt.heads == 0 || width % opt.heads != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible by heads");
  }
  kernels::AttentionDims dims;
  dims.batch = q.dim(0);
  dims.q_len = q.dim(1);
  dims.k_len = k.dim(1);
  dims.heads = opt.heads;
  dims.head_dim = width / opt.heads;
  dims.causal = opt.causal;
  dims.scale = 1.0 / std::sqrt(static_cast<double>(dims.head_dim));
  if (opt.key_valid && opt.key_valid->size() != dims.batch * dims.k_len) {
    throw ShapeError("attention: key mask has " + std::to_string(opt.key_valid->size()) +
                     " entries, expected " + std::to_string(dims.batch * dims.k_len));
  }
  const std::uint8_t* mask = opt.key_valid ? opt.key_valid->data() : nullptr;
  std::vector<double> out(q.numel());
  auto probs = std::make_shared<std::vector<double>>(dims.batch * dims.heads * dims.q_len * dims.k_len);
  const auto dead = kernels::attention_forward(dims, q.data().data(), k.data().data(),
                                               v.data().data(), mask, out.data(), probs->data());
  detail::add_macs(2ULL * dims.batch * dims.heads * dims.q_len * dims.k_len * dims.head_dim);
  if (opt.probs_out) *opt.probs_out = *probs;
  if (opt.dead_rows) *opt.dead_rows = dead;
  auto key_valid = opt.key_valid;
  return make_result(q.shape(), std::move(out), {q, k, v}, [dims, probs, key_valid](Node& self) {
    const auto& qv = data_of(self, 0);
    const auto& kv = data_of(self, 1);
    const auto& vv = data_of(self, 2);
    // The kernel writes all three gradients; route unused ones to scratch.
    std::vector<double> scratch_q, scratch_k, scratch_v;
    auto pick = [&](std::size_t i, std::vector<double>& scratch, std::size_t n) -> double* {
      if (auto* g = grad_of(self, i)) return g->data();
      scratch.assign(n, 0.0);
      return scratch.data();
    };
    double* dq = pick(0, scratch_q, qv.size());
    double* dk = pick(1, scratch_k, kv.size());
    double* dv = pick(2, scratch_v, vv.size());
    kernels::attention_backward(dims, qv.data(), kv.data(), vv.data(),
                                key_valid ? key_valid->data() : nullptr, probs->data(),
                                self.grad.data(), dq, dk, dv);
  });
}

Tensor nll_loss(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto vocab = last_dim(logits, "nll_loss");
  const auto rows = logits.numel() / vocab;
  if (targets.size() != rows || mask.size() != rows) {
    throw ShapeError("nll_loss: expected " + std::to_string(rows) + " targets and mask entries");
  }
  std::size_t count = 0;
  for (auto m : mask) count += (m != 0);
  if (count == 0) throw std::invalid_argument("nll_loss: mask selects no positions");
  auto probs = std::make_shared<std::vector<double>>(rows * vocab, 0.0);
  double total = 0.0;
  const auto& z = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::invalid_argument("nll_loss: target " + std::to_string(t) + " outside vocabulary");
    }
    double mx = kNegInf;
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, z[r * vocab + j]);
    double se = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(z[r * vocab + j] - mx);
      (*probs)[r * vocab + j] = e;
      se += e;
    }
    for (std::size_t j = 0; j < vocab; ++j) (*probs)[r * vocab + j] /= se;
    total += (mx + std::log(se)) - z[r * vocab + static_cast<std::size_t>(t)];
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return make_result({}, {total * inv}, {logits},
                     [probs, tgt = std::move(tgt), msk = std::move(msk), rows, vocab, inv](Node& self) {
                       auto* g = grad_of(self, 0);
                       if (!g) return;
                       const double s = self.grad[0] * inv;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!msk[r]) continue;
                         for (std::size_t j = 0; j < vocab; ++j) (*g)[r * vocab + j] += s * (*probs)[r * vocab + j];
                         (*g)[r * vocab + static_cast<std::size_t>(tgt[r])] -= s;
                       }
                     });
}

}  // namespace pave
