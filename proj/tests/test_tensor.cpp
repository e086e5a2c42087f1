// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "ssrt/tensor.hpp"

#include "grad_suite.hpp"

using namespace ssrt;

namespace {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Keeps every element at least `margin` away from each kink so central
// differences stay valid for piecewise ops.
Tensor rand_away_from(Shape shape, Rng& rng, std::vector<double> kinks, double margin = 0.05) {
  Tensor t = rand_tensor(std::move(shape), rng, -1.0, 1.0);
  for (auto& v : t.values_mut())
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v >= k ? margin : -margin) * 2.0;
  return t;
}

}  // namespace

TEST_CASE("construction and shape validation") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.rank() == 2);
  CHECK(z.size() == 6);
  CHECK(z.values()[5] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  CHECK(f.values()[0] == 2.5);

  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3, 4}).item(), ContractError);
  CHECK(Tensor::scalar(7.0).item() == 7.0);
}

TEST_CASE("matmul matches hand-computed product") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(a, b);
  CHECK(c.values()[0] == doctest::Approx(19));
  CHECK(c.values()[1] == doctest::Approx(22));
  CHECK(c.values()[2] == doctest::Approx(43));
  CHECK(c.values()[3] == doctest::Approx(50));
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("bmm agrees with matmul per batch element and honors transpose_b") {
  Rng rng(11);
  Tensor a = rand_tensor({2, 3, 4}, rng);
  Tensor b = rand_tensor({2, 4, 5}, rng);
  Tensor c = bmm(a, b);
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor an = Tensor::from_data({3, 4}, {a.values().begin() + n * 12, a.values().begin() + (n + 1) * 12});
    Tensor bn = Tensor::from_data({4, 5}, {b.values().begin() + n * 20, b.values().begin() + (n + 1) * 20});
    Tensor cn = matmul(an, bn);
    for (std::size_t i = 0; i < 15; ++i)
      CHECK(c.values()[n * 15 + i] == doctest::Approx(cn.values()[i]).epsilon(1e-12));
  }

  Tensor bt = rand_tensor({2, 5, 4}, rng);
  Tensor ct = bmm(a, bt, true);
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor an = Tensor::from_data({3, 4}, {a.values().begin() + n * 12, a.values().begin() + (n + 1) * 12});
    Tensor bn = Tensor::from_data({5, 4}, {bt.values().begin() + n * 20, bt.values().begin() + (n + 1) * 20});
    Tensor cn = matmul(an, transpose(bn));
    for (std::size_t i = 0; i < 15; ++i)
      CHECK(ct.values()[n * 15 + i] == doctest::Approx(cn.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one and match a hand-computed row") {
  Tensor x = Tensor::from_data({1, 3}, {1, 2, 3});
  Tensor p = softmax_rows(x);
  CHECK(p.values()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
  CHECK(p.values()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-10));
  CHECK(p.values()[2] == doctest::Approx(0.66524095577482190).epsilon(1e-10));

  Rng rng(3);
  Tensor big = rand_tensor({40, 9}, rng, -30.0, 30.0);
  Tensor probs = softmax_rows(big);
  for (std::size_t i = 0; i < 40; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += probs.values()[i * 9 + j];
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("layer norm standardizes each row") {
  Tensor x = Tensor::from_data({1, 3}, {2, 4, 6});
  Tensor g = Tensor::full({3}, 1.0);
  Tensor b = Tensor::zeros({3});
  Tensor y = layer_norm(x, g, b);
  CHECK(y.values()[0] == doctest::Approx(-1.2247448713915890).epsilon(1e-5));
  CHECK(y.values()[1] == doctest::Approx(0.0).scale(1.0));
  CHECK(y.values()[2] == doctest::Approx(1.2247448713915890).epsilon(1e-5));
}

TEST_CASE("gelu and sigmoid match reference points") {
  Tensor x = Tensor::from_data({3}, {1.0, -1.0, 0.0});
  Tensor y = gelu(x);
  CHECK(y.values()[0] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(-0.15865525393145705).epsilon(1e-12));
  CHECK(y.values()[2] == doctest::Approx(0.0).scale(1.0));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("patchify lays out non-overlapping patches row-major") {
  std::vector<double> img(16);
  std::iota(img.begin(), img.end(), 0.0);
  Tensor images = Tensor::from_data({1, 4, 4, 1}, img);
  Tensor patches = patchify(images, 2);
  REQUIRE(patches.shape() == Shape{4, 4});
  const std::vector<double> expect = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  for (std::size_t i = 0; i < 16; ++i) CHECK(patches.values()[i] == expect[i]);
  CHECK_THROWS_AS(patchify(images, 3), ShapeError);
}

TEST_CASE("head split and merge are inverse permutations") {
  Tensor x = Tensor::from_data({2, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor h = to_heads(x, 1, 2, 2);
  REQUIRE(h.shape() == Shape{2, 2, 2});
  const std::vector<double> expect = {0, 1, 4, 5, 2, 3, 6, 7};
  for (std::size_t i = 0; i < 8; ++i) CHECK(h.values()[i] == expect[i]);

  Rng rng(5);
  Tensor big = rand_tensor({6 * 4, 8}, rng);
  Tensor round = from_heads(to_heads(big, 6, 4, 2), 6, 4, 2);
  for (std::size_t i = 0; i < big.size(); ++i) CHECK(round.values()[i] == big.values()[i]);
}

TEST_CASE("batch norm uses batch statistics in train mode and running buffers in eval") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor g = Tensor::full({2}, 1.0);
  Tensor b = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0);

  Tensor y = batch_norm_1d(x, g, b, rm, rv, true);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.values()[2] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(rm.values()[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(rm.values()[1] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(rv.values()[0] == doctest::Approx(1.0).epsilon(1e-12));

  Tensor rm2 = Tensor::full({2}, 1.0);
  Tensor rv2 = Tensor::full({2}, 4.0);
  Tensor ye = batch_norm_1d(x, g, b, rm2, rv2, false);
  CHECK(ye.values()[0] == doctest::Approx((1.0 - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-10));
  CHECK(ye.values()[3] == doctest::Approx((4.0 - 1.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-10));
  CHECK(rm2.values()[0] == 1.0);  // eval must not touch the buffers
}

TEST_CASE("dropout scales kept activations and is identity in eval mode") {
  Tensor x = Tensor::full({1000}, 1.0);
  Rng rng(123);
  Tensor y = dropout(x, 0.5, rng, true);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    zeros += v == 0.0;
  }
  CHECK(zeros > 350);
  CHECK(zeros < 650);

  Rng rng2(123);
  Tensor y2 = dropout(x, 0.5, rng2, true);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.values()[i] == y2.values()[i]);

  Rng rng3(9);
  Tensor ye = dropout(x, 0.5, rng3, false);
  for (double v : ye.values()) CHECK(v == 1.0);
}

TEST_CASE("finite differences validate every differentiable catalog op") {
  const auto checks = grad_suite::op_checks();
  for (const auto& name : op_catalog()) {
    if (grad_suite::algebraic_only().count(name)) continue;
    CAPTURE(name);
    REQUIRE(checks.count(name) == 1);
    CHECK(checks.at(name)() < 1e-6);
  }
}

TEST_CASE("stop_gradient freezes its operand in the backward pass") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = mean(mul(x, stop_gradient(x)));
  tape.backward(loss);
  // d/dx mean(x * const(x)) = const(x)/n, not 2x/n.
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(x.values()[i] / 3.0).epsilon(1e-12));
}

TEST_CASE("gradient reversal negates and scales the upstream gradient") {
  Rng rng(40);
  Tensor x = rand_tensor({2, 3}, rng);
  x.set_requires_grad(true);

  std::vector<double> plain_grad;
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = mean(mul(x, x));
    tape.backward(loss);
    plain_grad.assign(x.grad().begin(), x.grad().end());
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = mean(gradient_reversal(mul(x, x), 1.3));
    tape.backward(loss);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(-1.3 * plain_grad[i]).epsilon(1e-12));
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = mean(gradient_reversal(gradient_reversal(mul(x, x), 1.0), 1.0));
    tape.backward(loss);
    for (std::size_t i = 0; i < x.size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(plain_grad[i]).epsilon(1e-12));
  }
  // Forward pass is the identity.
  Tensor y = gradient_reversal(x, 2.0);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("gradients accumulate across every consumer of a tensor") {
  Tensor x = Tensor::from_data({4}, {0.5, -1.0, 2.0, 0.25}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = mean(add(mul(x, x), x));
  tape.backward(loss);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(x.grad()[i] == doctest::Approx((2.0 * x.values()[i] + 1.0) / 4.0).epsilon(1e-12));

  // Shared prefix feeding two branches, as in a perturbed/unperturbed pair.
  Rng rng(41);
  Tensor w = rand_tensor({3, 3}, rng);
  Tensor v = rand_tensor({2, 3}, rng);
  double worst = grad_check(
      [&] {
        Tensor h = relu(matmul(v, w));
        return add(mean(h), mean(mul(h, h)));
      },
      {v, w});
  CHECK(worst < 1e-6);
}

TEST_CASE("attention-shaped composite passes finite differences") {
  const std::size_t B = 2, T = 3, D = 4, H = 2;
  Rng rng(42);
  Tensor x = rand_tensor({B * T, D}, rng);
  Tensor wq = rand_tensor({D, D}, rng), wk = rand_tensor({D, D}, rng),
         wv = rand_tensor({D, D}, rng);
  double worst = grad_check(
      [&] {
        Tensor q = to_heads(matmul(x, wq), B, T, H);
        Tensor k = to_heads(matmul(x, wk), B, T, H);
        Tensor v = to_heads(matmul(x, wv), B, T, H);
        Tensor att = softmax_rows(scale(bmm(q, k, true), 1.0 / std::sqrt(double(D / H))));
        Tensor out = from_heads(bmm(att, v), B, T, H);
        return mean(mul(out, out));
      },
      {x, wq, wk, wv});
  CHECK(worst < 1e-6);
}

TEST_CASE("backward reports contract violations") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);

  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = mean(x);
    Tensor vec = mul(x, x);
    CHECK_THROWS_AS(tape.backward(vec), ContractError);  // non-scalar target
  }
  Tape other;
  CHECK_THROWS_AS(other.backward(loss), ContractError);  // produced elsewhere
  CHECK_THROWS_AS(other.backward(Tensor::scalar(1.0)), ContractError);  // plain leaf
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(0.5));
}

TEST_CASE("backward can rerun on the same tape with identical results") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor loss = mean(mul(x, x));
  tape.backward(loss);
  std::vector<double> first(x.grad().begin(), x.grad().end());
  tape.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == first[i]);
}

TEST_CASE("tensors recorded but unreachable from the loss get zero gradients") {
  Tensor a = Tensor::from_data({2}, {1, 2}, true);
  Tensor b = Tensor::from_data({2}, {3, 4}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor unused = scale(b, 2.0);
  (void)unused;
  Tensor loss = mean(a);
  tape.backward(loss);
  REQUIRE(b.has_grad());
  CHECK(b.grad()[0] == 0.0);
  CHECK(b.grad()[1] == 0.0);
}

TEST_CASE("ops evaluated without an active tape compute values only") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = mul(x, x);
  CHECK(y.values()[1] == 4.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("dispatch rejects unknown ops and bad arity") {
  CHECK_THROWS_AS(forward_op("frobnicate", {}), UnsupportedOpError);
  Tensor x = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(forward_op("matmul", {x}), ShapeError);
  CHECK_THROWS_AS(forward_op("scale", {x}), ContractError);  // missing attribute
}

TEST_CASE("all_finite flags NaN and infinity") {
  CHECK(all_finite(Tensor::from_data({2}, {1.0, -2.0})));
  CHECK_FALSE(all_finite(Tensor::from_data({2}, {1.0, std::nan("")})));
  CHECK_FALSE(all_finite(Tensor::from_data({2}, {1.0, INFINITY})));
}
