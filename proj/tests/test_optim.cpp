// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "ssrt/optim.hpp"
#include "ssrt/tensor.hpp"

using namespace ssrt;

namespace {

Tensor param(std::vector<double> v) {
  Shape shape{v.size()};
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

void set_grad(Tensor& t, std::vector<double> g) { t.impl()->grad = std::move(g); }

}  // namespace

TEST_CASE("two hand-iterated momentum steps") {
  Tensor p = param({1.0});
  SgdMomentum opt({{{p}, 1.0}}, 0.1);
  set_grad(p, {1.0});
  opt.step_with_lr(0.1);
  CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(opt.state().velocity[0][0] == doctest::Approx(1.0).epsilon(1e-12));

  set_grad(p, {1.0});
  opt.step_with_lr(0.1);
  CHECK(p.values()[0] == doctest::Approx(0.71).epsilon(1e-12));
  CHECK(opt.state().velocity[0][0] == doctest::Approx(1.9).epsilon(1e-12));
  CHECK(opt.step_count() == 2);
}

TEST_CASE("learning-rate schedule reference points") {
  CHECK(lr_schedule(0.01, 0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_schedule(0.01, 1000) == doctest::Approx(0.005946035575013605).epsilon(1e-12));
  CHECK(lr_schedule(0.01, 9000) == doctest::Approx(0.0017782794100389228).epsilon(1e-12));
}

TEST_CASE("schedule is positive and strictly decreasing") {
  double prev = lr_schedule(0.01, 0);
  for (std::size_t i = 1; i <= 10000; i += 97) {
    double lr = lr_schedule(0.01, i);
    CHECK(lr > 0.0);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("adversarial warm-up reference points") {
  CHECK(grl_schedule(0, 4000) == doctest::Approx(0.0).epsilon(1e-15));
  // 2/(1+e^-5) - 1 at the halfway point.
  CHECK(grl_schedule(2000, 4000) == doctest::Approx(0.9866142981514303).epsilon(1e-12));
  // 2/(1+e^-10) - 1 at the end, and saturated past it.
  CHECK(grl_schedule(4000, 4000) == doctest::Approx(0.9999092042625951).epsilon(1e-12));
  CHECK(grl_schedule(9999, 4000) == doctest::Approx(0.9999092042625951).epsilon(1e-12));
  CHECK_THROWS_AS(grl_schedule(1, 0), ContractError);

  double prev = -1.0;
  for (std::size_t i = 0; i <= 4000; i += 40) {
    double w = grl_schedule(i, 4000);
    CHECK(w >= 0.0);
    CHECK(w < 1.0);
    CHECK(w > prev);
    prev = w;
  }
}

TEST_CASE("group multiplier scales the scheduled rate") {
  Tensor backbone = param({0.0});
  Tensor head = param({0.0});
  SgdMomentum opt({{{backbone}, 0.1}, {{head}, 1.0}}, 0.01, 0.0);
  set_grad(backbone, {1.0});
  set_grad(head, {1.0});
  opt.step();
  // Step index 0: lr = lr0, backbone moves at a tenth of it.
  CHECK(backbone.values()[0] == doctest::Approx(-0.001).epsilon(1e-12));
  CHECK(head.values()[0] == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("scheduled steps advance the decay index") {
  Tensor p = param({0.0});
  SgdMomentum opt({{{p}, 1.0}}, 0.01, 0.0);
  set_grad(p, {1.0});
  opt.step();
  set_grad(p, {1.0});
  opt.step();
  double expected = -0.01 - 0.01 * std::pow(1.001, -0.75);
  CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("non-finite gradient aborts the step atomically") {
  Tensor a = param({1.0, 2.0});
  Tensor b = param({3.0});
  SgdMomentum opt({{{a}, 1.0}, {{b}, 1.0}}, 0.01);
  set_grad(a, {1.0, 1.0});
  set_grad(b, {1.0});
  opt.step();
  auto saved_a = std::vector<double>(a.values().begin(), a.values().end());
  auto saved_b = std::vector<double>(b.values().begin(), b.values().end());
  OptimizerState saved = opt.state();

  set_grad(a, {1.0, 1.0});
  set_grad(b, {std::nan("")});
  CHECK_THROWS_AS(opt.step(), NonFiniteError);
  // Nothing moved: params, velocities, and the counter are untouched, even
  // for the group whose gradient was fine.
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) == saved_a);
  CHECK(std::vector<double>(b.values().begin(), b.values().end()) == saved_b);
  CHECK(opt.state().velocity == saved.velocity);
  CHECK(opt.step_count() == saved.step);

  set_grad(b, {1.0});
  opt.step();
  CHECK(opt.step_count() == saved.step + 1);
}

TEST_CASE("missing gradient decays momentum only") {
  Tensor p = param({1.0});
  SgdMomentum opt({{{p}, 1.0}}, 0.01);
  set_grad(p, {1.0});
  opt.step_with_lr(0.1);  // v = 1, p = 0.9
  p.clear_grad();
  opt.step_with_lr(0.1);  // v = 0.9, p = 0.9 - 0.09
  CHECK(opt.state().velocity[0][0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p.values()[0] == doctest::Approx(0.81).epsilon(1e-12));
}

TEST_CASE("state round-trips and restore validates layout") {
  Tensor p = param({1.0, -1.0});
  SgdMomentum opt({{{p}, 1.0}}, 0.01);
  for (int i = 0; i < 3; ++i) {
    set_grad(p, {0.5, -0.25});
    opt.step();
  }
  OptimizerState snap = opt.state();
  for (int i = 0; i < 2; ++i) {
    set_grad(p, {1.0, 1.0});
    opt.step();
  }
  CHECK(opt.step_count() == 5);
  opt.restore_state(snap);
  CHECK(opt.step_count() == 3);
  CHECK(opt.state().velocity == snap.velocity);

  OptimizerState bad;
  bad.velocity = {{1.0}};  // wrong width for a 2-element parameter
  CHECK_THROWS_AS(opt.restore_state(bad), ContractError);
}
