// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every knob of a training run, addressable through flat
// key=value text (config files and --set overrides share one code path).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssrt/model.hpp"
#include "ssrt/synthdata.hpp"

namespace ssrt {

enum class OmegaMode { bernoulli, fixed0, fixed1 };
enum class TargetLoss { sr, mi, none };

std::string omega_mode_name(OmegaMode mode);
OmegaMode parse_omega_mode(const std::string& name);
std::string target_loss_name(TargetLoss loss);
TargetLoss parse_target_loss(const std::string& name);
std::string grad_block_mode_name(GradBlockMode mode);
GradBlockMode parse_grad_block_mode(const std::string& name);

struct RunConfig {
  // Data: either a directory holding source.ssrtdata/target.ssrtdata, or a
  // generation spec (data.* keys). The model's image dims and class count
  // always come from the data.
  std::string data_dir;
  DatasetSpec data;

  // Model (model.* keys).
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 2;
  double dropout = 0.5;
  std::size_t bottleneck_dim = 32;
  std::vector<int> perturb_layers = {0, 1, 2};

  // Method.
  double alpha = 0.3;
  double beta = 0.2;
  double epsilon = 0.4;
  std::size_t T = 160;  // safe-training interval
  std::size_t L = 4;    // detector levels
  bool safe_training = true;
  OmegaMode omega_mode = OmegaMode::bernoulli;
  GradBlockMode grad_block_mode = GradBlockMode::none;
  TargetLoss target_loss = TargetLoss::sr;
  bool adversarial = true;
  // Escape hatch for collapse experiments: permits alpha outside [0, 1].
  bool force_alpha = false;

  // Optimization and bookkeeping.
  double lr0 = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_iter = 4000;
  std::size_t eval_interval = 50;
  std::uint64_t seed = 1;
  std::string out;

  ModelConfig model_config() const;  // dims taken from the data spec
  void validate() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Applies one "key=value" assignment. Unknown keys and malformed values are
/// contract errors, so typos fail loudly.
void set_config_key(RunConfig& config, const std::string& assignment);

/// Parses flat key=value text ('#' starts a comment, blank lines ignored).
RunConfig parse_run_config(const std::string& text);

RunConfig load_run_config(const std::string& path);

/// Canonical text form; parse_run_config round-trips it exactly.
std::string serialize_run_config(const RunConfig& config);

}  // namespace ssrt
