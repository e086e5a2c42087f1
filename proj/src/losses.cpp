// SPDX-License-Identifier: Apache-2.0
#include "ssrt/losses.hpp"

#include <cmath>
#include <string>

namespace ssrt {

namespace {

constexpr double kProbFloor = 1e-12;

void check(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

Tensor as_rows(const Tensor& t) {
  if (t.rank() == 1) return reshape(t, {1, t.dim(0)});
  return t;
}

/// Mean over all elements of −log(x) after clamping into (0,1).
Tensor mean_neg_log(const Tensor& probs) {
  return scale(mean(log(clamp(probs, kProbFloor, 1.0 - kProbFloor), 0.0)), -1.0);
}

}  // namespace

Tensor cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels) {
  check(probs.rank() == 2, "cross_entropy: probs must be [batch, classes]");
  check(labels.size() == probs.dim(0), "cross_entropy: one label per row required");
  for (auto l : labels)
    if (l >= probs.dim(1))
      throw ContractError("invalid-label: " + std::to_string(l) + " out of range for " +
                          std::to_string(probs.dim(1)) + " classes");
  Tensor picked = gather_labels(probs, labels);
  return scale(mean(log(add_scalar(picked, kProbFloor), 0.0)), -1.0);
}

Tensor domain_adversarial_loss(const Tensor& d_src, const Tensor& d_tgt) {
  for (const Tensor* t : {&d_src, &d_tgt})
    check(t->rank() == 1 || (t->rank() == 2 && t->dim(t->rank() - 1) == 1),
          "domain_adversarial_loss: inputs must be [batch] or [batch,1]");
  check(d_src.size() > 0 && d_tgt.size() > 0, "domain_adversarial_loss: empty batch");
  Tensor one_minus_tgt = add_scalar(scale(d_tgt, -1.0), 1.0);
  return add(mean_neg_log(d_src), mean_neg_log(one_minus_tgt));
}

Tensor kl_div_rows(const Tensor& p_teacher, const Tensor& p_student, bool detach_teacher,
                   bool detach_student) {
  Tensor t = as_rows(p_teacher);
  Tensor s = as_rows(p_student);
  if (t.shape() != s.shape()) throw ShapeError("kl_div: distribution shapes differ");
  if (detach_teacher) t = stop_gradient(t);
  if (detach_student) s = stop_gradient(s);
  Tensor log_ratio = sub(log(t, kProbFloor), log(s, kProbFloor));
  return row_sum(mul(t, log_ratio));
}

Tensor kl_div(const Tensor& p_teacher, const Tensor& p_student, bool detach_teacher,
              bool detach_student) {
  return mean(kl_div_rows(p_teacher, p_student, detach_teacher, detach_student));
}

FilterMask confidence_filter(const Tensor& probs, double epsilon) {
  check(epsilon >= 0.0 && epsilon < 1.0, "confidence_filter: epsilon must be in [0, 1)");
  Tensor p = as_rows(probs);
  std::size_t b = p.dim(0), k = p.dim(1);
  FilterMask mask;
  mask.keep.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = p.values()[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, p.values()[i * k + j]);
    mask.keep[i] = mx > epsilon;
    if (mask.keep[i]) ++mask.count;
  }
  return mask;
}

Tensor self_refinement_loss(const Tensor& probs_clean, const Tensor& probs_perturbed, int omega,
                            double epsilon, bool detach_teacher) {
  check(omega == 0 || omega == 1, "self_refinement_loss: omega must be 0 or 1");
  Tensor clean = as_rows(probs_clean);
  Tensor pert = as_rows(probs_perturbed);
  if (clean.shape() != pert.shape())
    throw ShapeError("self_refinement_loss: branch shapes differ");

  const Tensor& teacher = omega == 1 ? clean : pert;
  const Tensor& student = omega == 1 ? pert : clean;
  FilterMask mask = confidence_filter(teacher, epsilon);
  if (mask.count == 0) return Tensor::scalar(0.0);
  std::vector<std::size_t> kept = mask.kept_indices();
  return kl_div(gather_rows(teacher, kept), gather_rows(student, kept), detach_teacher, false);
}

Tensor mutual_information_loss(const Tensor& probs) {
  Tensor p = as_rows(probs);
  check(p.dim(0) > 0, "mutual_information_loss: empty batch");
  std::size_t b = p.dim(0);
  Tensor averaging_row = Tensor::full({1, b}, 1.0 / double(b));
  Tensor marginal = matmul(averaging_row, p);  // [1, K]
  Tensor marginal_entropy = scale(sum(mul(marginal, log(marginal, kProbFloor))), -1.0);
  Tensor mean_entropy = scale(sum(mul(p, log(p, kProbFloor))), -1.0 / double(b));
  return sub(mean_entropy, marginal_entropy);
}

LossBundle make_loss_bundle(const Tensor& ce, const Tensor& domain, const Tensor& target,
                            double beta) {
  for (const Tensor* t : {&ce, &domain, &target}) {
    check(t->defined() && t->size() == 1, "loss bundle: components must be scalars");
    if (!all_finite(*t)) throw NonFiniteError("loss component");
  }
  LossBundle bundle;
  bundle.ce = ce;
  bundle.domain = domain;
  bundle.target = target;
  bundle.total = add(add(ce, domain), scale(target, beta));
  return bundle;
}

}  // namespace ssrt
