// SPDX-License-Identifier: Apache-2.0
#include "ssrt/safe_training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <span>

namespace ssrt {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

}  // namespace

std::size_t diversity(const std::vector<std::size_t>& predicted_labels) {
  check(!predicted_labels.empty(), "diversity of an empty batch");
  std::set<std::size_t> distinct(predicted_labels.begin(), predicted_labels.end());
  return distinct.size();
}

double ramp_scalar(std::size_t t, std::size_t t_r, std::size_t ramp_length) {
  check(ramp_length > 0, "ramp length must be positive");
  check(t >= t_r, "ramp queried before its start");
  const std::size_t elapsed = t - t_r;
  if (elapsed >= ramp_length) return 1.0;
  return std::sin(std::numbers::pi / (2.0 * double(ramp_length)) * double(elapsed));
}

std::pair<double, double> apply_ramp(double alpha, double beta, double r) {
  check(r >= 0.0 && r <= 1.0, "ramp value outside [0, 1]");
  return {r * alpha, r * beta};
}

bool check_div_drop(const std::vector<double>& window, std::size_t levels,
                    std::size_t interval_length) {
  check(levels >= 1, "detector needs at least one level");
  check(interval_length > 0 && interval_length % (std::size_t(1) << levels) == 0,
        "interval length must be divisible by 2^levels");
  check(window.size() == interval_length, "detector window has wrong length");
  for (std::size_t l = 1; l <= levels; ++l) {
    const std::size_t parts = std::size_t(1) << l;
    const std::size_t span = interval_length / parts;
    double prev_avg = 0.0;
    for (std::size_t p = 0; p < parts; ++p) {
      double sum = 0.0;
      for (std::size_t i = p * span; i < (p + 1) * span; ++i) sum += window[i];
      const double avg = sum / double(span);
      if (p > 0 && avg < prev_avg - 1.0) return true;
      prev_avg = avg;
    }
  }
  return false;
}

std::size_t next_ramp_length(std::size_t iter, std::size_t last_restore,
                             std::size_t ramp_length) {
  check(iter >= last_restore, "restore iteration precedes the previous restore");
  return (iter - last_restore <= ramp_length) ? 2 * ramp_length : ramp_length;
}

Snapshot take_snapshot(const ModelParams& params, const SgdMomentum& optimizer,
                       std::size_t step) {
  Snapshot snap;
  for (const auto& [name, t] : params.named_tensors()) {
    const std::span<const double> src = t.values();
    snap.tensors.emplace_back(src.begin(), src.end());
  }
  snap.optimizer = optimizer.state();
  snap.step = step;
  return snap;
}

void restore_snapshot(const Snapshot& snapshot, ModelParams& params, SgdMomentum& optimizer) {
  auto targets = params.named_tensors();
  check(snapshot.tensors.size() == targets.size(), "snapshot tensor count mismatch");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::span<double> dst = targets[i].second.values_mut();
    check(snapshot.tensors[i].size() == dst.size(), "snapshot tensor size mismatch");
    std::copy(snapshot.tensors[i].begin(), snapshot.tensors[i].end(), dst.begin());
  }
  optimizer.restore_state(snapshot.optimizer);
}

SafeTrainer::SafeTrainer(std::size_t interval_length, std::size_t levels,
                         ModelParams& params, SgdMomentum& optimizer)
    : interval_length_(interval_length),
      levels_(levels),
      ramp_length_(interval_length),
      params_(&params),
      optimizer_(&optimizer) {
  check(levels_ >= 1, "detector needs at least one level");
  check(interval_length_ > 0 && interval_length_ % (std::size_t(1) << levels_) == 0,
        "interval length must be divisible by 2^levels");
  snapshot_ = take_snapshot(*params_, *optimizer_, 0);
}

std::optional<RestoreEvent> SafeTrainer::on_iteration(std::size_t iter) {
  check(iter >= 1, "iterations are 1-based");
  check(history_.size() == iter, "one diversity value must be recorded per iteration");
  if (iter % interval_length_ != 0 || iter < interval_length_) return std::nullopt;
  const std::vector<double> window(history_.end() - std::ptrdiff_t(interval_length_),
                                   history_.end());
  std::optional<RestoreEvent> event;
  if (check_div_drop(window, levels_, interval_length_)) {
    restore_snapshot(snapshot_, *params_, *optimizer_);
    ramp_start_ = iter;
    ramp_length_ = next_ramp_length(iter, last_restore_, ramp_length_);
    last_restore_ = iter;
    event = RestoreEvent{iter, ramp_length_, ramp_start_};
  }
  snapshot_ = take_snapshot(*params_, *optimizer_, iter);
  return event;
}

}  // namespace ssrt
