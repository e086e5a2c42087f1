// SPDX-License-Identifier: Apache-2.0
//
// The full training loop wiring every module together, plus evaluation, the
// test-time perturbation robustness probe, and perturbation inversion.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ssrt/config.hpp"
#include "ssrt/model.hpp"
#include "ssrt/report.hpp"
#include "ssrt/synthdata.hpp"

namespace ssrt {

struct EvalReport {
  double overall = 0.0;
  std::vector<double> per_class;  // one entry per class
  std::size_t sample_count = 0;
};

/// Eval-mode accuracy over a labeled dataset.
EvalReport evaluate(ModelParams& params, const ModelConfig& config, const Dataset& data);

struct TrainOutput {
  ModelParams params;
  ModelConfig model;
  double final_acc_src = 0.0;  // held-out source accuracy at the last iteration
  double final_acc_tgt = 0.0;
};

/// Runs the configured training loop for exactly max_iter steps, appending
/// one row per step to `log`. Per step: cross-entropy on a source batch,
/// adversarial domain loss through gradient reversal, the ramped target loss
/// on a target batch, one scheduled SGD update, a diversity record from the
/// un-perturbed target predictions, and the safe-training boundary step.
/// The log survives in `log` even when the run aborts on a non-finite loss
/// (the last row carries event "nonfinite" before the throw).
TrainOutput train_ssrt(const RunConfig& config, TrainLog& log);

/// Loads source/target from config.data_dir, or generates them from the spec.
std::pair<Dataset, Dataset> obtain_datasets(const RunConfig& config);

/// Mean accuracy drop when predictions are made from representations
/// perturbed at test time (offsets toward random same-dataset partners),
/// averaged over `trials`. Clean accuracy is measured on the same forward
/// path, so alpha_test = 0 gives exactly 0.
double robustness_probe(ModelParams& params, const ModelConfig& config, const Dataset& data,
                        int layer, double alpha_test, std::size_t trials, std::uint64_t seed);

/// Objective increased past 10x its initial value: the step size is too big.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InversionResult {
  Tensor image;               // [1, H, W, C], clamped to [0, 1]
  std::vector<double> trace;  // objective at init, then after each step
};

/// Gradient-descent inversion of a perturbed representation: finds pixels
/// whose clean representation at `layer` matches b + alpha * (b_partner - b).
/// x and x_r are single images [1, H, W, C]; optimization starts at x and
/// uses a backtracking line search capped at lr_vis.
InversionResult invert_perturbation(ModelParams& params, const ModelConfig& config,
                                    const Tensor& x, const Tensor& x_r, int layer,
                                    double alpha, std::size_t steps, double lr_vis);

}  // namespace ssrt
