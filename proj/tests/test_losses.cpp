// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "ssrt/losses.hpp"
#include "ssrt/model.hpp"
#include "ssrt/tensor.hpp"

using namespace ssrt;

namespace {

Tensor random_simplex(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> z(rows * cols);
  for (auto& v : z) v = rng.normal();
  return softmax_rows(Tensor::from_data({rows, cols}, std::move(z)));
}

double grad_l1(const Tensor& t) {
  double n = 0.0;
  for (double g : t.grad()) n += std::abs(g);
  return n;
}

}  // namespace

TEST_CASE("cross entropy reference values") {
  Tensor uniform = Tensor::full({1, 8}, 0.125);
  CHECK(cross_entropy(uniform, {3}).item() ==
        doctest::Approx(2.0794415416798357).epsilon(1e-9));

  Tensor half = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(cross_entropy(half, {0}).item() == doctest::Approx(0.6931471805599453).epsilon(1e-9));

  Tensor hot = Tensor::from_data({1, 3}, {0.0, 1.0, 0.0});
  CHECK(std::abs(cross_entropy(hot, {1}).item()) < 1e-11);

  // Batched call averages the per-row values.
  Tensor both = Tensor::from_data({2, 2}, {0.5, 0.5, 0.25, 0.75});
  double expected = 0.5 * (0.6931471805599453 + 1.3862943611198906);
  CHECK(cross_entropy(both, {0, 0}).item() == doctest::Approx(expected).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(both, {0, 2}), ContractError);
  CHECK_THROWS_AS(cross_entropy(both, {0}), ContractError);
}

TEST_CASE("cross entropy through softmax passes finite differences") {
  Rng rng(7);
  std::vector<double> zv(3 * 4);
  for (auto& v : zv) v = rng.normal();
  Tensor z = Tensor::from_data({3, 4}, std::move(zv));
  std::vector<std::size_t> labels = {0, 2, 1};
  double err = grad_check([&]() { return cross_entropy(softmax_rows(z), labels); }, {z});
  CHECK(err < 1e-6);
}

TEST_CASE("domain adversarial loss reference values") {
  Tensor src = Tensor::full({2, 1}, 0.5);
  Tensor tgt = Tensor::full({3, 1}, 0.5);
  CHECK(domain_adversarial_loss(src, tgt).item() ==
        doctest::Approx(1.3862943611198906).epsilon(1e-9));

  Tensor s1 = Tensor::from_data({1, 1}, {0.8});
  Tensor t1 = Tensor::from_data({1, 1}, {0.3});
  CHECK(domain_adversarial_loss(s1, t1).item() ==
        doctest::Approx(0.5798184952536402).epsilon(1e-9));

  // Perfect discrimination drives the loss toward zero.
  Tensor s_hi = Tensor::from_data({1, 1}, {1.0 - 1e-9});
  Tensor t_lo = Tensor::from_data({1, 1}, {1e-9});
  CHECK(domain_adversarial_loss(s_hi, t_lo).item() == doctest::Approx(0.0).epsilon(1e-6));

  // Exact 0/1 probabilities are clamped, not fatal.
  Tensor s_one = Tensor::from_data({1, 1}, {1.0});
  Tensor t_zero = Tensor::from_data({1, 1}, {0.0});
  Tensor loss = domain_adversarial_loss(s_one, t_zero);
  CHECK(all_finite(loss));
  CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("constant-half discriminator is stationary on symmetric batches") {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_blocks = 1;
  c.num_heads = 2;
  c.num_classes = 3;
  c.bottleneck_dim = 8;
  c.perturb_layers = {0};
  Rng rng(5);
  ModelParams p = init_params(c, rng);
  for (auto& v : p.disc_w2.values_mut()) v = 0.0;
  for (auto& v : p.disc_b2.values_mut()) v = 0.0;

  std::vector<double> fv(4 * c.bottleneck_dim);
  for (auto& v : fv) v = rng.normal();
  Tensor features = Tensor::from_data({4, c.bottleneck_dim}, std::move(fv));

  Tape tape;
  Tape::Scope scope(tape);
  Tensor d_src = discriminator_forward(features, p, c, false, nullptr);
  Tensor d_tgt = discriminator_forward(features, p, c, false, nullptr);
  for (double v : d_src.values()) CHECK(v == 0.5);
  tape.backward(domain_adversarial_loss(d_src, d_tgt));
  for (const Tensor& t : {p.disc_w1, p.disc_b1, p.disc_w2, p.disc_b2}) CHECK(grad_l1(t) < 1e-8);
}

TEST_CASE("KL divergence reference values") {
  Tensor p = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(kl_div(p, p).item() == 0.0);

  Tensor hot = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor even = Tensor::from_data({1, 2}, {0.5, 0.5});
  CHECK(kl_div(hot, even).item() == doctest::Approx(0.6931471805599453).epsilon(1e-9));

  Tensor skew = Tensor::from_data({1, 2}, {0.9, 0.1});
  CHECK(kl_div(skew, even).item() == doctest::Approx(0.3680642071684971).epsilon(1e-9));

  // Rank-1 vectors are accepted; batches average per-row divergences.
  CHECK(kl_div(Tensor::from_data({2}, {0.9, 0.1}), Tensor::from_data({2}, {0.5, 0.5})).item() ==
        doctest::Approx(0.3680642071684971).epsilon(1e-9));
  Tensor batch_t = Tensor::from_data({2, 2}, {0.9, 0.1, 1.0, 0.0});
  Tensor batch_s = Tensor::from_data({2, 2}, {0.5, 0.5, 0.5, 0.5});
  double expected = 0.5 * (0.3680642071684971 + 0.6931471805599453);
  CHECK(kl_div(batch_t, batch_s).item() == doctest::Approx(expected).epsilon(1e-9));

  CHECK_THROWS_AS(kl_div(hot, Tensor::from_data({1, 3}, {0.2, 0.3, 0.5})), ShapeError);
}

TEST_CASE("KL divergence is nonnegative and vanishes only at equality") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a = random_simplex(1, 5, rng);
    Tensor b = random_simplex(1, 5, rng);
    double v = kl_div(a, b).item();
    CHECK(v >= -1e-15);
    double gap = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      gap = std::max(gap, std::abs(a.values()[i] - b.values()[i]));
    if (gap > 1e-3) CHECK(v > 0.0);
    CHECK(kl_div(a, a).item() == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("KL gradient through the student softmax is p_s minus p_t") {
  Tensor z = Tensor::zeros({1, 2}, true);
  Tensor teacher = Tensor::from_data({1, 2}, {0.9, 0.1});
  Tape tape;
  Tape::Scope scope(tape);
  tape.backward(kl_div(teacher, softmax_rows(z)));
  CHECK(z.grad()[0] == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(z.grad()[1] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("KL gradient flows through both sides by default and obeys blocking flags") {
  Rng rng(23);
  std::vector<double> tv(2 * 4), sv(2 * 4);
  for (auto& v : tv) v = rng.normal();
  for (auto& v : sv) v = rng.normal();
  Tensor zt = Tensor::from_data({2, 4}, tv);
  Tensor zs = Tensor::from_data({2, 4}, sv);

  double fd = grad_check(
      [&]() { return kl_div(softmax_rows(zt), softmax_rows(zs)); }, {zt, zs});
  CHECK(fd < 1e-6);

  auto grads = [&](bool detach_teacher, bool detach_student) {
    zt.clear_grad();
    zs.clear_grad();
    zt.set_requires_grad(true);
    zs.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(
        kl_div(softmax_rows(zt), softmax_rows(zs), detach_teacher, detach_student));
    return std::pair<std::vector<double>, std::vector<double>>(
        {zt.grad().begin(), zt.grad().end()}, {zs.grad().begin(), zs.grad().end()});
  };

  auto open = grads(false, false);
  auto teacher_blocked = grads(true, false);
  auto student_blocked = grads(false, true);

  double open_t = 0.0, open_s = 0.0;
  for (double g : open.first) open_t += std::abs(g);
  for (double g : open.second) open_s += std::abs(g);
  CHECK(open_t > 1e-6);
  CHECK(open_s > 1e-6);

  for (double g : teacher_blocked.first) CHECK(g == 0.0);
  CHECK(teacher_blocked.second == open.second);
  for (double g : student_blocked.second) CHECK(g == 0.0);
  CHECK(student_blocked.first == open.first);
}

TEST_CASE("confidence filter applies a strict threshold") {
  Tensor all = Tensor::from_data({2, 2}, {0.6, 0.4, 0.2, 0.8});
  FilterMask everything = confidence_filter(all, 0.0);
  CHECK(everything.count == 2);
  CHECK(everything.keep == std::vector<bool>{true, true});

  Tensor near = Tensor::from_data({2, 3}, {0.39, 0.305, 0.305, 0.41, 0.295, 0.295});
  FilterMask mask = confidence_filter(near, 0.4);
  CHECK(mask.keep == std::vector<bool>{false, true});
  CHECK(mask.count == 1);
  CHECK(mask.kept_indices() == std::vector<std::size_t>{1});

  Tensor boundary = Tensor::from_data({1, 2}, {0.4, 0.6});
  CHECK(confidence_filter(boundary, 0.6).keep == std::vector<bool>{false});

  CHECK_THROWS_AS(confidence_filter(all, 1.0), ContractError);
}

TEST_CASE("self-refinement loss evaluates both directions with teacher-side filtering") {
  Tensor p = Tensor::from_data({1, 2}, {0.9, 0.1});
  Tensor pt = Tensor::from_data({1, 2}, {0.5, 0.5});

  CHECK(self_refinement_loss(p, pt, 1, 0.4).item() ==
        doctest::Approx(0.3680642071684971).epsilon(1e-9));
  CHECK(self_refinement_loss(p, pt, 0, 0.4).item() ==
        doctest::Approx(0.5108256237659906).epsilon(1e-9));

  // Identical branches give zero in either direction.
  CHECK(self_refinement_loss(p, p, 1, 0.4).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(self_refinement_loss(p, p, 0, 0.4).item() == doctest::Approx(0.0).epsilon(1e-12));

  // The filter reads the teacher side: with a confident clean branch and a
  // diffuse perturbed branch, omega=1 keeps the row while omega=0 drops it.
  Tensor conf = Tensor::from_data({1, 3}, {0.9, 0.05, 0.05});
  Tensor diffuse = Tensor::from_data({1, 3}, {0.5, 0.3, 0.2});
  CHECK(self_refinement_loss(conf, diffuse, 1, 0.6).item() > 0.0);
  CHECK(self_refinement_loss(conf, diffuse, 0, 0.6).item() == 0.0);

  // Everything filtered out -> exactly zero.
  Tensor weak = Tensor::from_data({2, 3}, {0.34, 0.33, 0.33, 0.4, 0.3, 0.3});
  CHECK(self_refinement_loss(weak, weak, 1, 0.95).item() == 0.0);

  CHECK_THROWS_AS(self_refinement_loss(p, pt, 2, 0.4), ContractError);
}

TEST_CASE("self-refinement loss is invariant to batch permutation") {
  Rng rng(29);
  Tensor clean = random_simplex(6, 4, rng);
  Tensor pert = random_simplex(6, 4, rng);
  std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
  Tensor clean_p = gather_rows(clean, perm);
  Tensor pert_p = gather_rows(pert, perm);
  for (int omega : {0, 1}) {
    double a = self_refinement_loss(clean, pert, omega, 0.3).item();
    double b = self_refinement_loss(clean_p, pert_p, omega, 0.3).item();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("self-refinement loss matches a direct transcription of its formula") {
  Rng rng(31);
  std::size_t b = 8, k = 5;
  Tensor clean = random_simplex(b, k, rng);
  Tensor pert = random_simplex(b, k, rng);
  double epsilon = 0.35;

  auto hand_direction = [&](const Tensor& teacher, const Tensor& student) {
    double total = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < b; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, teacher.values()[i * k + j]);
      if (!(mx > epsilon)) continue;
      ++kept;
      for (std::size_t j = 0; j < k; ++j) {
        double t = teacher.values()[i * k + j], s = student.values()[i * k + j];
        if (t > 0.0) total += t * std::log(t / s);
      }
    }
    return kept == 0 ? 0.0 : total / double(kept);
  };

  double l1 = self_refinement_loss(clean, pert, 1, epsilon).item();
  double l0 = self_refinement_loss(clean, pert, 0, epsilon).item();
  CHECK(l1 == doctest::Approx(hand_direction(clean, pert)).epsilon(1e-9));
  CHECK(l0 == doctest::Approx(hand_direction(pert, clean)).epsilon(1e-9));
  // omega-expectation: the average of the two directions equals the average
  // of the two transcribed terms.
  CHECK(0.5 * (l1 + l0) ==
        doctest::Approx(0.5 * (hand_direction(clean, pert) + hand_direction(pert, clean)))
            .epsilon(1e-9));
}

TEST_CASE("teacher-detached refinement changes only the teacher-side gradient") {
  Rng rng(37);
  std::vector<double> cv(3 * 4), pv(3 * 4);
  for (auto& v : cv) v = rng.normal();
  for (auto& v : pv) v = rng.normal();
  Tensor zc = Tensor::from_data({3, 4}, cv);
  Tensor zp = Tensor::from_data({3, 4}, pv);

  auto grads = [&](bool detach_teacher) {
    zc.clear_grad();
    zp.clear_grad();
    zc.set_requires_grad(true);
    zp.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss =
        self_refinement_loss(softmax_rows(zc), softmax_rows(zp), 1, 0.0, detach_teacher);
    tape.backward(loss);
    return std::pair<std::vector<double>, std::vector<double>>(
        {zc.grad().begin(), zc.grad().end()}, {zp.grad().begin(), zp.grad().end()});
  };

  auto open = grads(false);
  auto blocked = grads(true);
  double open_teacher = 0.0;
  for (double g : open.first) open_teacher += std::abs(g);
  CHECK(open_teacher > 1e-6);
  for (double g : blocked.first) CHECK(g == 0.0);
  CHECK(blocked.second == open.second);
}

TEST_CASE("mutual information loss reference values") {
  Tensor uniform = Tensor::full({3, 4}, 0.25);
  CHECK(mutual_information_loss(uniform).item() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor distinct = Tensor::from_data(
      {4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  CHECK(mutual_information_loss(distinct).item() ==
        doctest::Approx(-1.3862943611198906).epsilon(1e-9));

  Tensor collapsed = Tensor::from_data({3, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
  CHECK(std::abs(mutual_information_loss(collapsed).item()) < 1e-9);
}

TEST_CASE("mutual information loss passes finite differences") {
  Rng rng(41);
  std::vector<double> zv(5 * 4);
  for (auto& v : zv) v = rng.normal();
  Tensor z = Tensor::from_data({5, 4}, std::move(zv));
  double err = grad_check([&]() { return mutual_information_loss(softmax_rows(z)); }, {z});
  CHECK(err < 1e-6);
}

TEST_CASE("loss bundle forms the weighted total and validates finiteness") {
  Tensor ce = Tensor::scalar(2.0);
  Tensor d = Tensor::scalar(1.3);
  Tensor tgt = Tensor::scalar(0.5);
  LossBundle bundle = make_loss_bundle(ce, d, tgt, 0.2);
  CHECK(bundle.total.item() == doctest::Approx(2.0 + 1.3 + 0.1).epsilon(1e-12));

  CHECK_THROWS_AS(make_loss_bundle(Tensor::scalar(std::nan("")), d, tgt, 0.2), NonFiniteError);

  // The total stays differentiable through its components.
  Tensor z = Tensor::from_data({1, 2}, {0.3, -0.1}, true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor probs = softmax_rows(z);
  LossBundle live = make_loss_bundle(cross_entropy(probs, {0}), Tensor::scalar(0.0),
                                     kl_div(Tensor::from_data({1, 2}, {0.7, 0.3}), probs), 0.2);
  tape.backward(live.total);
  CHECK(grad_l1(z) > 0.0);
}
