// SPDX-License-Identifier: Apache-2.0
//
// Safe-training control plane: prediction-diversity measurement, multi-scale
// diversity-drop detection over a sliding window, the sine ramp r(t), full
// model+optimizer snapshots, and the ramp-length doubling rule that guards
// against restore oscillation.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ssrt/model.hpp"
#include "ssrt/optim.hpp"

namespace ssrt {

/// Count of distinct labels in a nonempty batch of predictions.
std::size_t diversity(const std::vector<std::size_t>& predicted_labels);

/// r(t) = sin(pi/(2*T_r) * (t - t_r)) while t - t_r < T_r, then exactly 1.
double ramp_scalar(std::size_t t, std::size_t t_r, std::size_t ramp_length);

/// (alpha_r, beta_r) = (r*alpha, r*beta), r in [0,1].
std::pair<double, double> apply_ramp(double alpha, double beta, double r);

/// Multi-scale drop detector: for l = 1..levels split the window into 2^l
/// equal consecutive sub-intervals and fire when any adjacent pair satisfies
/// avg(next) < avg(prev) - 1. The window length must equal interval_length,
/// which must be divisible by 2^levels.
bool check_div_drop(const std::vector<double>& window, std::size_t levels,
                    std::size_t interval_length);

/// Ramp length after a restore at `iter`: doubled when the previous restore
/// lies within the current ramp length, unchanged otherwise.
std::size_t next_ramp_length(std::size_t iter, std::size_t last_restore,
                             std::size_t ramp_length);

/// Deep copy of every model tensor (weights and batch-norm running buffers)
/// plus the optimizer momentum state, taken at one step index.
struct Snapshot {
  std::vector<std::vector<double>> tensors;  // named_tensors order
  OptimizerState optimizer;
  std::size_t step = 0;
};

Snapshot take_snapshot(const ModelParams& params, const SgdMomentum& optimizer,
                       std::size_t step);

/// Copies snapshot bytes back into the existing tensor storages (parameter
/// identity is preserved, so optimizer groups stay bound) and restores the
/// optimizer state. Layout mismatch is a contract violation.
void restore_snapshot(const Snapshot& snapshot, ModelParams& params, SgdMomentum& optimizer);

struct RestoreEvent {
  std::size_t iter = 0;
  std::size_t ramp_length = 0;  // T_r after the doubling rule
  std::size_t ramp_start = 0;   // t_r = iter
};

/// Owns the safe-training state across a run. Construction captures the
/// initial snapshot. Call record_diversity once per iteration (iterations are
/// 1-based), then on_iteration(iter); boundaries are iter % T == 0, iter >= T.
class SafeTrainer {
 public:
  SafeTrainer(std::size_t interval_length, std::size_t levels, ModelParams& params,
              SgdMomentum& optimizer);

  void record_diversity(std::size_t value) { history_.push_back(double(value)); }

  /// At a boundary: run the detector on the last T diversity values, restore
  /// and adapt the ramp on a hit, then always save a fresh snapshot. Returns
  /// the restore event if one fired.
  std::optional<RestoreEvent> on_iteration(std::size_t iter);

  double ramp(std::size_t t) const { return ramp_scalar(t, ramp_start_, ramp_length_); }

  std::size_t interval_length() const { return interval_length_; }
  std::size_t levels() const { return levels_; }
  std::size_t ramp_length() const { return ramp_length_; }
  std::size_t ramp_start() const { return ramp_start_; }
  std::size_t last_restore() const { return last_restore_; }
  const std::vector<double>& history() const { return history_; }
  const Snapshot& snapshot() const { return snapshot_; }

 private:
  std::size_t interval_length_;
  std::size_t levels_;
  std::size_t ramp_length_;  // T_r
  std::size_t ramp_start_ = 0;   // t_r
  std::size_t last_restore_ = 0;
  std::vector<double> history_;
  ModelParams* params_;
  SgdMomentum* optimizer_;
  Snapshot snapshot_;
};

}  // namespace ssrt
