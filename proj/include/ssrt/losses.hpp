// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: source cross-entropy, domain adversarial loss,
// KL divergence with gradient-side blocking, the confidence filter, the
// bi-directional self-refinement loss, and the optional mutual-information
// target loss. All losses are tape-recorded scalars.
#pragma once

#include <cstdint>
#include <vector>

#include "ssrt/tensor.hpp"

namespace ssrt {

/// Per-batch keep mask from the confidence filter.
struct FilterMask {
  std::vector<bool> keep;
  std::size_t count = 0;

  std::vector<std::size_t> kept_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) idx.push_back(i);
    return idx;
  }
};

/// Mean over the batch of −log(probs[label] + 1e-12).
Tensor cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels);

/// −E_src[log d] − E_tgt[log(1−d)], probabilities clamped to
/// [1e-12, 1−1e-12] before the logs. Inputs are [B,1] or [B].
Tensor domain_adversarial_loss(const Tensor& d_src, const Tensor& d_tgt);

/// Row-wise D(p_teacher ‖ p_student) = Σ p_t·log(p_t/p_s) with the 0·log 0
/// convention and both arguments floored at 1e-12 inside the logs: [B,K] ->
/// [B]. Gradients flow through both sides unless a side is detached.
Tensor kl_div_rows(const Tensor& p_teacher, const Tensor& p_student,
                   bool detach_teacher = false, bool detach_student = false);

/// Batch mean of kl_div_rows; rank-1 inputs are treated as a single row.
Tensor kl_div(const Tensor& p_teacher, const Tensor& p_student, bool detach_teacher = false,
              bool detach_student = false);

/// mask[i] = (max row probability > epsilon), strict.
FilterMask confidence_filter(const Tensor& probs, double epsilon);

/// Eq.-4 direction switch: omega=1 refines the perturbed branch toward the
/// clean branch (teacher = clean), omega=0 the reverse (teacher = perturbed).
/// The confidence filter always reads the teacher's probabilities; an empty
/// filtered set yields exactly 0 with no gradient contribution.
/// detach_teacher severs the teacher side of the KL (ablation).
Tensor self_refinement_loss(const Tensor& probs_clean, const Tensor& probs_perturbed, int omega,
                            double epsilon, bool detach_teacher = false);

/// −[H(mean_i p_i) − mean_i H(p_i)], natural log; negated so that minimizing
/// it maximizes mutual information.
Tensor mutual_information_loss(const Tensor& probs);

/// Eq.-1 assembly. The adversarial sign of the domain term is realized by
/// gradient reversal inside the discriminator path, so the total is a plain
/// weighted sum; reported loss_d is the discriminator's own loss value.
struct LossBundle {
  Tensor ce;
  Tensor domain;
  Tensor target;  // self-refinement or mutual-information term
  Tensor total;
};

/// total = ce + domain + beta*target; throws NonFiniteError if any component
/// is non-finite.
LossBundle make_loss_bundle(const Tensor& ce, const Tensor& domain, const Tensor& target,
                            double beta);

}  // namespace ssrt
