// SPDX-License-Identifier: Apache-2.0
//
// SSRTCKPT model checkpoints: the model configuration plus every named tensor
// (weights and batch-norm running buffers) with bit-exact f64 payloads.
#pragma once

#include <string>

#include "ssrt/model.hpp"

namespace ssrt {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

/// Format: magic "SSRTCKPT", version u32, config (nine u32 dims, f64 dropout,
/// perturb layer list), tensor count, then per tensor: name, rank, dims,
/// f64 values. Little-endian throughout.
void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ssrt
