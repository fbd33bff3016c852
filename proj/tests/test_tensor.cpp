// Copyright 2026 The pave-patch Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "pave/errors.hpp"
#include "pave/grad_check.hpp"
#include "pave/kernels.hpp"

using namespace pave;
using pave::testing::bit_equal;
using pave::testing::max_abs_diff;
using pave::testing::randn;

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(1);
  const auto a = randn({5, 7}, rng), b = randn({7, 3}, rng);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 7; ++p) acc += a.at({i, p}) * b.at({p, j});
      CHECK(c.at({i, j}) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("linear broadcasts over leading axes and adds the bias") {
  Rng rng(2);
  const auto x = randn({2, 3, 4}, rng), w = randn({5, 4}, rng), b = randn({5}, rng);
  const auto y = linear(x, w, b);
  REQUIRE(y.shape() == Shape{2, 3, 5});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t o = 0; o < 5; ++o) {
        double acc = b.at({o});
        for (std::size_t p = 0; p < 4; ++p) acc += x.at({i, t, p}) * w.at({o, p});
        CHECK(y.at({i, t, o}) == doctest::Approx(acc).epsilon(1e-14));
      }
}

TEST_CASE("shape errors name the offending shapes") {
  Rng rng(3);
  CHECK_THROWS_AS(matmul(randn({2, 3}, rng), randn({4, 2}, rng)), ShapeError);
  CHECK_THROWS_AS(add(randn({2, 3}, rng), randn({3, 2}, rng)), ShapeError);
  CHECK_THROWS_AS(reshape(randn({2, 3}, rng), {4, 2}), ShapeError);
  CHECK_THROWS_AS(randn({2, 3}, rng).backward(), ShapeError);
}

TEST_CASE("softmax rows sum to one and fully masked rows are zero") {
  const double inf = std::numeric_limits<double>::infinity();
  const auto x = Tensor::from_data({3, 3}, {1.0, 2.0, 3.0, -inf, 0.5, -inf, -inf, -inf, -inf});
  std::size_t dead = 0;
  const auto y = softmax(x, 1, &dead);
  CHECK(dead == 1);
  CHECK(y.at({0, 0}) + y.at({0, 1}) + y.at({0, 2}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.at({1, 0}) == 0.0);
  CHECK(y.at({1, 1}) == 1.0);
  for (std::size_t j = 0; j < 3; ++j) CHECK(y.at({2, j}) == 0.0);
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
  Rng rng(4);
  const auto x = randn({6, 10}, rng);
  const auto y = layer_norm(x, Tensor::full({10}, 1.0), Tensor::zeros({10}), 1e-300);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 10; ++j) m += y.at({r, j});
    m /= 10;
    for (std::size_t j = 0; j < 10; ++j) v += (y.at({r, j}) - m) * (y.at({r, j}) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(v / 10 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gather_rows copies rows and zero-fills index -1") {
  const auto x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<std::ptrdiff_t> idx{2, -1, 0};
  const auto y = gather_rows(x, idx);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{5, 6, 0, 0, 1, 2});
}

TEST_CASE("nll_loss equals the mean negative log-probability of masked rows") {
  const auto logits = Tensor::from_data({3, 2}, {0.0, 1.0, 2.0, 0.0, 5.0, 5.0});
  const std::vector<int> targets{1, 0, 1};
  const std::vector<std::uint8_t> mask{1, 1, 0};
  const double l0 = -std::log(std::exp(1.0) / (1.0 + std::exp(1.0)));
  const double l1 = -std::log(std::exp(2.0) / (std::exp(2.0) + 1.0));
  CHECK(nll_loss(logits, targets, mask).item() == doctest::Approx((l0 + l1) / 2).epsilon(1e-14));
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(nll_loss(logits, targets, none), std::invalid_argument);
}

TEST_CASE("gradients of every op agree with finite differences") {
  Rng rng(5);
  auto a = randn({3, 4}, rng, true), b = randn({4, 5}, rng, true), bias = randn({5}, rng, true);
  auto gamma = randn({5}, rng, true), beta = randn({5}, rng, true);
  auto q = randn({2, 3, 4}, rng, true), k = randn({2, 5, 4}, rng, true), v = randn({2, 5, 4}, rng, true);
  const std::vector<int> targets{0, 3, 4};
  const std::vector<std::uint8_t> mask{1, 1, 1};
  auto fn = [&] {
    const auto h = gelu(add_bias(matmul(a, b), bias));
    const auto n = layer_norm(h, gamma, beta);
    AttentionOptions opt;
    opt.heads = 2;
    const auto att = attention(q, k, v, opt);
    const auto mixed = add(sum(mul(att, att)), mean(scale(n, 0.5)));
    return add(nll_loss(n, targets, mask), mixed);
  };
  std::vector<Tensor> params{a, b, bias, gamma, beta, q, k, v};
  const auto r = grad_check(fn, params, 1e-5, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.checked == 12 + 20 + 5 + 5 + 5 + 24 + 40 + 40);
}

TEST_CASE("masked and causal attention gradients agree with finite differences") {
  Rng rng(6);
  auto q = randn({2, 4, 4}, rng, true), k = randn({2, 4, 4}, rng, true), v = randn({2, 4, 4}, rng, true);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 0, 1, 1, 0, 0, 0, 0});
  auto fn = [&] {
    AttentionOptions opt;
    opt.heads = 2;
    opt.key_valid = valid;
    AttentionOptions causal;
    causal.heads = 1;
    causal.causal = true;
    return add(sum(mul(attention(q, k, v, opt), v)), sum(attention(q, k, v, causal)));
  };
  std::vector<Tensor> params{q, k, v};
  CHECK(grad_check(fn, params, 1e-5, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("fully masked query rows output zeros and are counted") {
  Rng rng(7);
  const auto q = randn({2, 3, 4}, rng), k = randn({2, 2, 4}, rng), v = randn({2, 2, 4}, rng);
  AttentionOptions opt;
  opt.heads = 2;
  opt.key_valid = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{1, 1, 0, 0});
  std::size_t dead = 0;
  opt.dead_rows = &dead;
  const auto y = attention(q, k, v, opt);
  CHECK(dead == 2 * 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) CHECK(y.at({1, t, j}) == 0.0);
}

TEST_CASE("causal attention ignores future keys") {
  Rng rng(8);
  const auto q = randn({1, 4, 4}, rng), k = randn({1, 4, 4}, rng), v = randn({1, 4, 4}, rng);
  auto k2 = Tensor::from_data({1, 4, 4}, std::vector<double>(k.data().begin(), k.data().end()));
  auto v2 = Tensor::from_data({1, 4, 4}, std::vector<double>(v.data().begin(), v.data().end()));
  for (std::size_t j = 0; j < 4; ++j) {
    k2.mutable_data()[12 + j] += 3.0;
    v2.mutable_data()[12 + j] -= 2.0;
  }
  AttentionOptions opt;
  opt.causal = true;
  const auto y1 = attention(q, k, v, opt), y2 = attention(q, k2, v2, opt);
  CHECK(bit_equal(y1.data().subspan(0, 12), y2.data().subspan(0, 12)));
}

TEST_CASE("leaf gradients accumulate until zero_grad") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == 8.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("MacCounter counts matmul and attention work") {
  Rng rng(9);
  const auto a = randn({3, 4}, rng), b = randn({4, 5}, rng);
  const auto q = randn({2, 3, 8}, rng), k = randn({2, 6, 8}, rng);
  MacCounter c;
  matmul(a, b);
  AttentionOptions opt;
  opt.heads = 2;
  attention(q, k, k, opt);
  CHECK(c.count() == 3 * 4 * 5 + 2ull * 2 * 2 * 3 * 6 * 4);
}

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  Rng rng(10);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const auto m = 1 + rng.below(37), n = 1 + rng.below(29), k = 1 + rng.below(41);
    const auto a = randn({m, k}, rng), b = randn({k, n}, rng), bt = randn({n, k}, rng), at = randn({k, m}, rng);
    const bool acc = trial % 2 == 1;
    auto c0 = randn({m, n}, rng);
    std::vector<double> s(c0.data().begin(), c0.data().end()), o = s;
    kernels::serial::gemm_nn(m, n, k, a.data().data(), b.data().data(), s.data(), acc);
    kernels::omp::gemm_nn(m, n, k, a.data().data(), b.data().data(), o.data(), acc);
    CHECK(bit_equal(s, o));
    kernels::serial::gemm_nt(m, n, k, a.data().data(), bt.data().data(), s.data(), acc);
    kernels::omp::gemm_nt(m, n, k, a.data().data(), bt.data().data(), o.data(), acc);
    CHECK(bit_equal(s, o));
    kernels::serial::gemm_tn(m, n, k, at.data().data(), b.data().data(), s.data(), acc);
    kernels::omp::gemm_tn(m, n, k, at.data().data(), b.data().data(), o.data(), acc);
    CHECK(bit_equal(s, o));

    kernels::AttentionDims d;
    d.batch = 1 + rng.below(3);
    d.q_len = 1 + rng.below(9);
    d.k_len = 1 + rng.below(9);
    d.heads = 1 + rng.below(3);
    d.head_dim = 1 + rng.below(6);
    d.causal = trial % 3 == 0;
    d.scale = 0.3;
    const auto w = d.heads * d.head_dim;
    const auto q = randn({d.batch * d.q_len * w}, rng), kk = randn({d.batch * d.k_len * w}, rng),
               v = randn({d.batch * d.k_len * w}, rng), dout = randn({d.batch * d.q_len * w}, rng);
    std::vector<std::uint8_t> valid(d.batch * d.k_len);
    for (auto& x : valid) x = rng.below(4) != 0;
    const auto np = d.batch * d.heads * d.q_len * d.k_len;
    std::vector<double> ys(q.numel()), yo(q.numel()), ps(np), po(np);
    const auto deads = kernels::serial::attention_forward(d, q.data().data(), kk.data().data(), v.data().data(),
                                                          valid.data(), ys.data(), ps.data());
    const auto deado = kernels::omp::attention_forward(d, q.data().data(), kk.data().data(), v.data().data(),
                                                       valid.data(), yo.data(), po.data());
    CHECK(deads == deado);
    CHECK(bit_equal(ys, yo));
    CHECK(bit_equal(ps, po));
    std::vector<double> dq0(q.numel()), dk0(kk.numel()), dv0(v.numel()), dq1 = dq0, dk1 = dk0, dv1 = dv0;
    kernels::serial::attention_backward(d, q.data().data(), kk.data().data(), v.data().data(), valid.data(),
                                        ps.data(), dout.data().data(), dq0.data(), dk0.data(), dv0.data());
    kernels::omp::attention_backward(d, q.data().data(), kk.data().data(), v.data().data(), valid.data(),
                                     ps.data(), dout.data().data(), dq1.data(), dk1.data(), dv1.data());
    CHECK(bit_equal(dq0, dq1));
    CHECK(bit_equal(dk0, dk1));
    CHECK(bit_equal(dv0, dv1));
  }
}

TEST_CASE("concat and reshape round trip values and gradients") {
  Rng rng(11);
  auto a = randn({2, 3}, rng, true), b = randn({2, 2}, rng, true);
  const std::vector<Tensor> parts{a, b};
  auto fn = [&] {
    const auto c = concat(parts, 1);
    return sum(mul(reshape(c, {5, 2}), reshape(c, {5, 2})));
  };
  std::vector<Tensor> params{a, b};
  CHECK(grad_check(fn, params, 1e-5, 1e-5).max_rel_error < 1e-7);
  const auto c = concat(parts, 1);
  CHECK(c.at({1, 3}) == b.at({1, 0}));
}

TEST_CASE("detach copies values and drops history") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  const auto y = scale(x, 2.0).detach();
  CHECK(!y.requires_grad());
  CHECK(!y.same_storage(x));
  CHECK(y.at({1}) == 4.0);
}
