// SPDX-License-Identifier: Apache-2.0

#include "ssrt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ssrt {

double lr_schedule(double lr0, std::size_t i) {
  return lr0 * std::pow(1.0 + 1e-3 * static_cast<double>(i), -0.75);
}

double grl_schedule(std::size_t i, std::size_t max_iter) {
  if (max_iter == 0) throw ContractError("grl_schedule: max_iter must be positive");
  const double p = std::min(1.0, static_cast<double>(i) / static_cast<double>(max_iter));
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

SgdMomentum::SgdMomentum(std::vector<ParamGroup> groups, double lr0, double momentum)
    : groups_(std::move(groups)), lr0_(lr0), momentum_(momentum) {
  for (const auto& group : groups_)
    for (const auto& p : group.params) state_.velocity.emplace_back(p.size(), 0.0);
}

void SgdMomentum::step() {
  step_with_lr(lr_schedule(lr0_, state_.step));
}

void SgdMomentum::step_with_lr(double lr) {
  for (const auto& group : groups_)
    for (const auto& p : group.params)
      if (p.has_grad())
        for (double g : p.grad())
          if (!std::isfinite(g))
            throw NonFiniteError("gradient; step " + std::to_string(state_.step) + " aborted");

  std::size_t slot = 0;
  for (const auto& group : groups_) {
    double lr_eff = lr * group.lr_multiplier;
    for (const auto& p : group.params) {
      auto& v = state_.velocity[slot++];
      Tensor param = p;  // shared storage; mutation updates the model
      auto vals = param.values_mut();
      auto grad = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) {
        double g = grad.empty() ? 0.0 : grad[i];
        v[i] = momentum_ * v[i] + g;
        vals[i] -= lr_eff * v[i];
      }
    }
  }
  ++state_.step;
}

void SgdMomentum::restore_state(const OptimizerState& state) {
  if (state.velocity.size() != state_.velocity.size())
    throw ContractError("optimizer state has a different parameter layout");
  for (std::size_t i = 0; i < state.velocity.size(); ++i)
    if (state.velocity[i].size() != state_.velocity[i].size())
      throw ContractError("optimizer state buffer shape mismatch");
  state_ = state;
}

}  // namespace ssrt
