// SPDX-License-Identifier: Apache-2.0
//
// Tiny vision transformer with a class token, pre-norm blocks, a
// bottleneck+predictor head, and a domain discriminator behind gradient
// reversal. Every block boundary (and the raw-pixel pseudo-layer) can accept
// the token-sequence perturbation b~ = b + alpha * detach(b_partner - b).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssrt/rng.hpp"
#include "ssrt/tensor.hpp"

namespace ssrt {

/// Pseudo-layer index selecting perturbation of raw pixels instead of a
/// block's input token sequence.
inline constexpr int kRawInputLayer = -1;

struct ModelConfig {
  std::size_t image_size = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 8;
  double dropout_rate = 0.5;
  std::size_t bottleneck_dim = 32;
  std::vector<int> perturb_layers = {0, 1, 2};  // block indices; kRawInputLayer allowed

  std::size_t num_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }

  void validate() const;  // throws ContractError on violated invariants
  bool operator==(const ModelConfig&) const = default;
};

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor w_qkv, b_qkv;  // [D, 3D], [3D]
  Tensor w_out, b_out;  // [D, D], [D]
  Tensor ln2_gamma, ln2_beta;
  Tensor w_mlp1, b_mlp1;  // [D, mlp], [mlp]
  Tensor w_mlp2, b_mlp2;  // [mlp, D], [D]
};

struct ModelParams {
  Tensor patch_weight;  // [patch*patch*channels, D]
  Tensor patch_bias;    // [D]
  Tensor cls_token;     // [1, D]
  Tensor pos_embed;     // [tokens, D]
  std::vector<BlockParams> blocks;
  Tensor final_ln_gamma, final_ln_beta;

  // Head: bottleneck (linear -> batchnorm -> relu -> dropout), then the
  // class predictor (linear -> relu -> dropout -> linear).
  Tensor bneck_w, bneck_b;                  // [D, bottleneck], [bottleneck]
  Tensor bn_gamma, bn_beta;                 // [bottleneck]
  Tensor bn_running_mean, bn_running_var;   // buffers, not trained
  Tensor pred_w1, pred_b1;                  // [bottleneck, bottleneck]
  Tensor pred_w2, pred_b2;                  // [bottleneck, K]

  // Domain discriminator: predictor structure with one output.
  Tensor disc_w1, disc_b1;  // [bottleneck, bottleneck]
  Tensor disc_w2, disc_b2;  // [bottleneck, 1]

  /// Feature extractor f: patch embedding, blocks, final norm.
  std::vector<Tensor> backbone_params() const;
  /// Classifier head g: bottleneck linear, batch-norm affine, predictor.
  std::vector<Tensor> head_params() const;
  /// Discriminator d.
  std::vector<Tensor> disc_params() const;
  std::vector<Tensor> all_trainable() const;

  /// Stable name -> tensor listing covering trainables AND batch-norm running
  /// buffers; the order is the checkpoint/snapshot layout. Handles share
  /// storage with the params.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

/// Truncated-normal(0.02) weights and class token, zero biases and position
/// embedding, identity norms, batch-norm buffers at (0, 1).
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// [B,H,W,C] images -> [B, tokens, D] sequence: patch projection, class
/// token, position embedding. This is b^0, the input of block 0.
Tensor patch_embed(const Tensor& images, const ModelParams& params, const ModelConfig& config);

/// One pre-norm transformer block; shape-preserving on [B, tokens, D].
Tensor block_forward(const Tensor& seq, const BlockParams& block, const ModelConfig& config);

/// Blocks [begin, end) in sequence.
Tensor run_blocks(const Tensor& seq, const ModelParams& params, const ModelConfig& config,
                  std::size_t begin, std::size_t end);

/// Final layer norm + class-token row: [B, tokens, D] -> [B, D].
Tensor class_token_output(const Tensor& seq, const ModelParams& params,
                          const ModelConfig& config);

/// Bottleneck module. Train mode consumes rng for dropout and folds batch
/// statistics into the running buffers.
Tensor bottleneck_forward(const Tensor& cls, ModelParams& params, const ModelConfig& config,
                          bool train, Rng* rng);

/// Class probabilities from a bottleneck feature: softmax(predictor(feat)).
Tensor predictor_probs(const Tensor& feature, const ModelParams& params,
                       const ModelConfig& config, bool train, Rng* rng);

/// Discriminator MLP on the feature as-is (no gradient reversal): [B, 1]
/// domain probabilities in (0,1).
Tensor discriminator_forward(const Tensor& feature, const ModelParams& params,
                             const ModelConfig& config, bool train, Rng* rng);

/// discriminator_forward(gradient_reversal(feature, lambda_grl)): the
/// adversarial path. lambda_grl must be nonnegative.
Tensor discriminate(const Tensor& feature, const ModelParams& params, const ModelConfig& config,
                    double lambda_grl, bool train, Rng* rng);

struct ClassifyOutput {
  Tensor probs;    // [B, K]
  Tensor feature;  // [B, bottleneck]
};

/// Full forward: backbone, bottleneck, predictor. Train mode requires rng.
ClassifyOutput classify(const Tensor& images, ModelParams& params, const ModelConfig& config,
                        bool train, Rng* rng);

/// Which gradient paths of the perturbed branch are severed (ablations).
enum class GradBlockMode {
  none,     // default: gradients flow through b^l and both KL arguments
  teacher,  // sever the teacher side of the KL (applied in the loss)
  b_l,      // sever d(b~)/d(b^l): perturbed branch input fully detached
  both,     // teacher + b_l
};

struct PerturbedForward {
  Tensor probs_clean;        // p_x
  Tensor probs_perturbed;    // p~_x
  Tensor feature_clean;      // bottleneck output of the clean branch
  Tensor feature_perturbed;  // bottleneck output of the perturbed branch
  int layer = 0;
};

/// Two parameter-sharing branches from one target batch. The clean branch is
/// the plain forward. The perturbed branch restarts at `layer` from
/// b~ = b + alpha * detach(b[partner] - b), where partner[i] != i indexes the
/// same batch, then runs the remaining blocks and the head with its own
/// dropout stream. layer == kRawInputLayer perturbs pixels instead.
/// The offset term is constant data (never on the tape); modes b_l/both also
/// detach b itself at the boundary.
PerturbedForward forward_with_batch_perturbation(const Tensor& images,
                                                 const std::vector<std::size_t>& partner,
                                                 int layer, double alpha, ModelParams& params,
                                                 const ModelConfig& config, bool train, Rng* rng,
                                                 GradBlockMode mode = GradBlockMode::none);

/// Same contract with an explicit partner batch x_r (aligned row-for-row with
/// x). Equivalent to the batch variant when x_r gathers rows of x.
PerturbedForward forward_with_perturbation(const Tensor& images, const Tensor& partner_images,
                                           int layer, double alpha, ModelParams& params,
                                           const ModelConfig& config, bool train, Rng* rng,
                                           GradBlockMode mode = GradBlockMode::none);

/// The perturbed branch alone, for callers that already hold the clean
/// probabilities from another forward (e.g. a concatenated two-domain pass).
/// Identical perturbation and gradient contract to the batch variant.
ClassifyOutput forward_perturbed_branch(const Tensor& images,
                                        const std::vector<std::size_t>& partner, int layer,
                                        double alpha, ModelParams& params,
                                        const ModelConfig& config, bool train, Rng* rng,
                                        GradBlockMode mode = GradBlockMode::none);

}  // namespace ssrt
