// SPDX-License-Identifier: Apache-2.0
//
// SGD with momentum (v <- mu*v + g, p <- p - lr*v) over parameter groups with
// per-group learning-rate multipliers, and the polynomial decay schedule
// lr = lr0 * (1 + 1e-3*i)^(-0.75).
#pragma once

#include <cstdint>
#include <vector>

#include "ssrt/tensor.hpp"

namespace ssrt {

double lr_schedule(double lr0, std::size_t i);

/// Adversarial weight warm-up 2/(1+exp(-10p)) - 1 over training progress
/// p = i/max_iter: near 0 while the classifier forms, saturating toward 1.
double grl_schedule(std::size_t i, std::size_t max_iter);

struct ParamGroup {
  std::vector<Tensor> params;
  double lr_multiplier = 1.0;
};

/// Momentum buffers and step counter, detachable for snapshots.
struct OptimizerState {
  std::vector<std::vector<double>> velocity;  // flat, in group-then-param order
  std::size_t step = 0;
};

class SgdMomentum {
 public:
  SgdMomentum(std::vector<ParamGroup> groups, double lr0, double momentum = 0.9);

  /// One update at the scheduled rate lr_schedule(lr0, step) * multiplier.
  /// Scans every gradient first: any non-finite value aborts the whole step
  /// (no parameter, buffer, or counter changes) with NonFiniteError.
  /// Parameters without a gradient buffer this step count as zero gradient.
  void step();

  /// Same update at an explicit rate, bypassing the schedule.
  void step_with_lr(double lr);

  std::size_t step_count() const { return state_.step; }
  double lr0() const { return lr0_; }
  double momentum() const { return momentum_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

  OptimizerState state() const { return state_; }
  void restore_state(const OptimizerState& state);

 private:
  std::vector<ParamGroup> groups_;
  OptimizerState state_;
  double lr0_;
  double momentum_;
};

}  // namespace ssrt
