// SPDX-License-Identifier: Apache-2.0
#include "ssrt/model.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ssrt {

namespace {

void check(bool ok, const std::string& message) {
  if (!ok) throw ContractError(message);
}

Tensor trunc_normal_param(Shape shape, double stddev, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.truncated_normal(stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

void check_images(const Tensor& images, const ModelConfig& config) {
  if (images.rank() != 4 || images.dim(1) != config.image_size ||
      images.dim(2) != config.image_size || images.dim(3) != config.channels)
    throw ShapeError("model: images must be [batch, " + std::to_string(config.image_size) + ", " +
                     std::to_string(config.image_size) + ", " + std::to_string(config.channels) +
                     "]");
  if (images.dim(0) == 0) throw ShapeError("model: empty batch");
}

}  // namespace

void ModelConfig::validate() const {
  check(image_size > 0 && patch_size > 0 && channels > 0, "model config: zero dimension");
  check(image_size % patch_size == 0, "model config: image_size must be divisible by patch_size");
  check(embed_dim > 0 && num_heads > 0 && embed_dim % num_heads == 0,
        "model config: embed_dim must be divisible by num_heads");
  check(num_blocks > 0, "model config: at least one block");
  check(mlp_ratio > 0, "model config: mlp_ratio must be positive");
  check(num_classes >= 2, "model config: at least two classes");
  check(dropout_rate >= 0.0 && dropout_rate < 1.0, "model config: dropout_rate must be in [0, 1)");
  check(bottleneck_dim > 0, "model config: bottleneck_dim must be positive");
  check(!perturb_layers.empty(), "model config: perturb_layers must not be empty");
  for (int l : perturb_layers)
    check(l == kRawInputLayer || (l >= 0 && static_cast<std::size_t>(l) < num_blocks),
          "model config: perturb layer " + std::to_string(l) + " out of range");
}

std::vector<Tensor> ModelParams::backbone_params() const {
  std::vector<Tensor> out = {patch_weight, patch_bias, cls_token, pos_embed};
  for (const auto& b : blocks) {
    out.push_back(b.ln1_gamma);
    out.push_back(b.ln1_beta);
    out.push_back(b.w_qkv);
    out.push_back(b.b_qkv);
    out.push_back(b.w_out);
    out.push_back(b.b_out);
    out.push_back(b.ln2_gamma);
    out.push_back(b.ln2_beta);
    out.push_back(b.w_mlp1);
    out.push_back(b.b_mlp1);
    out.push_back(b.w_mlp2);
    out.push_back(b.b_mlp2);
  }
  out.push_back(final_ln_gamma);
  out.push_back(final_ln_beta);
  return out;
}

std::vector<Tensor> ModelParams::head_params() const {
  return {bneck_w, bneck_b, bn_gamma, bn_beta, pred_w1, pred_b1, pred_w2, pred_b2};
}

std::vector<Tensor> ModelParams::disc_params() const {
  return {disc_w1, disc_b1, disc_w2, disc_b2};
}

std::vector<Tensor> ModelParams::all_trainable() const {
  std::vector<Tensor> out = backbone_params();
  for (auto& t : head_params()) out.push_back(t);
  for (auto& t : disc_params()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch_weight", patch_weight);
  out.emplace_back("patch_bias", patch_bias);
  out.emplace_back("cls_token", cls_token);
  out.emplace_back("pos_embed", pos_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    std::string prefix = "block" + std::to_string(i) + ".";
    out.emplace_back(prefix + "ln1_gamma", b.ln1_gamma);
    out.emplace_back(prefix + "ln1_beta", b.ln1_beta);
    out.emplace_back(prefix + "w_qkv", b.w_qkv);
    out.emplace_back(prefix + "b_qkv", b.b_qkv);
    out.emplace_back(prefix + "w_out", b.w_out);
    out.emplace_back(prefix + "b_out", b.b_out);
    out.emplace_back(prefix + "ln2_gamma", b.ln2_gamma);
    out.emplace_back(prefix + "ln2_beta", b.ln2_beta);
    out.emplace_back(prefix + "w_mlp1", b.w_mlp1);
    out.emplace_back(prefix + "b_mlp1", b.b_mlp1);
    out.emplace_back(prefix + "w_mlp2", b.w_mlp2);
    out.emplace_back(prefix + "b_mlp2", b.b_mlp2);
  }
  out.emplace_back("final_ln_gamma", final_ln_gamma);
  out.emplace_back("final_ln_beta", final_ln_beta);
  out.emplace_back("bneck_w", bneck_w);
  out.emplace_back("bneck_b", bneck_b);
  out.emplace_back("bn_gamma", bn_gamma);
  out.emplace_back("bn_beta", bn_beta);
  out.emplace_back("bn_running_mean", bn_running_mean);
  out.emplace_back("bn_running_var", bn_running_var);
  out.emplace_back("pred_w1", pred_w1);
  out.emplace_back("pred_b1", pred_b1);
  out.emplace_back("pred_w2", pred_w2);
  out.emplace_back("pred_b2", pred_b2);
  out.emplace_back("disc_w1", disc_w1);
  out.emplace_back("disc_b1", disc_b1);
  out.emplace_back("disc_w2", disc_w2);
  out.emplace_back("disc_b2", disc_b2);
  return out;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const double sd = 0.02;
  std::size_t D = config.embed_dim;
  std::size_t P = config.patch_size;
  std::size_t M = config.mlp_dim();
  std::size_t B = config.bottleneck_dim;
  std::size_t K = config.num_classes;

  ModelParams p;
  p.patch_weight = trunc_normal_param({P * P * config.channels, D}, sd, rng);
  p.patch_bias = zeros_param({D});
  p.cls_token = trunc_normal_param({1, D}, sd, rng);
  p.pos_embed = zeros_param({config.num_tokens(), D});
  for (std::size_t i = 0; i < config.num_blocks; ++i) {
    BlockParams b;
    b.ln1_gamma = ones_param({D});
    b.ln1_beta = zeros_param({D});
    b.w_qkv = trunc_normal_param({D, 3 * D}, sd, rng);
    b.b_qkv = zeros_param({3 * D});
    b.w_out = trunc_normal_param({D, D}, sd, rng);
    b.b_out = zeros_param({D});
    b.ln2_gamma = ones_param({D});
    b.ln2_beta = zeros_param({D});
    b.w_mlp1 = trunc_normal_param({D, M}, sd, rng);
    b.b_mlp1 = zeros_param({M});
    b.w_mlp2 = trunc_normal_param({M, D}, sd, rng);
    b.b_mlp2 = zeros_param({D});
    p.blocks.push_back(std::move(b));
  }
  p.final_ln_gamma = ones_param({D});
  p.final_ln_beta = zeros_param({D});
  p.bneck_w = trunc_normal_param({D, B}, sd, rng);
  p.bneck_b = zeros_param({B});
  p.bn_gamma = ones_param({B});
  p.bn_beta = zeros_param({B});
  p.bn_running_mean = Tensor::zeros({B});
  p.bn_running_var = Tensor::full({B}, 1.0);
  p.pred_w1 = trunc_normal_param({B, B}, sd, rng);
  p.pred_b1 = zeros_param({B});
  p.pred_w2 = trunc_normal_param({B, K}, sd, rng);
  p.pred_b2 = zeros_param({K});
  p.disc_w1 = trunc_normal_param({B, B}, sd, rng);
  p.disc_b1 = zeros_param({B});
  p.disc_w2 = trunc_normal_param({B, 1}, sd, rng);
  p.disc_b2 = zeros_param({1});
  return p;
}

Tensor patch_embed(const Tensor& images, const ModelParams& params, const ModelConfig& config) {
  check_images(images, config);
  Tensor patches = patchify(images, config.patch_size);
  Tensor tokens = linear(patches, params.patch_weight, params.patch_bias);
  Tensor seq = prepend_token(tokens, params.cls_token, images.dim(0));
  return add_pos(seq, params.pos_embed);
}

Tensor block_forward(const Tensor& seq, const BlockParams& block, const ModelConfig& config) {
  if (seq.rank() != 3) throw ShapeError("block_forward: sequence must be [batch, tokens, dim]");
  std::size_t B = seq.dim(0), T = seq.dim(1), D = seq.dim(2);
  if (D != config.embed_dim) throw ShapeError("block_forward: dim mismatch with config");
  std::size_t H = config.num_heads;

  Tensor normed = layer_norm(seq, block.ln1_gamma, block.ln1_beta);
  Tensor qkv = linear(reshape(normed, {B * T, D}), block.w_qkv, block.b_qkv);
  Tensor q = to_heads(col_slice(qkv, 0, D), B, T, H);
  Tensor k = to_heads(col_slice(qkv, D, D), B, T, H);
  Tensor v = to_heads(col_slice(qkv, 2 * D, D), B, T, H);
  Tensor scores = scale(bmm(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(double(D / H)));
  Tensor context = from_heads(bmm(softmax_rows(scores), v), B, T, H);
  Tensor attn_out = linear(context, block.w_out, block.b_out);
  Tensor res1 = add(seq, reshape(attn_out, {B, T, D}));

  Tensor normed2 = layer_norm(res1, block.ln2_gamma, block.ln2_beta);
  Tensor hidden = gelu(linear(reshape(normed2, {B * T, D}), block.w_mlp1, block.b_mlp1));
  Tensor mlp_out = linear(hidden, block.w_mlp2, block.b_mlp2);
  return add(res1, reshape(mlp_out, {B, T, D}));
}

Tensor run_blocks(const Tensor& seq, const ModelParams& params, const ModelConfig& config,
                  std::size_t begin, std::size_t end) {
  check(begin <= end && end <= params.blocks.size(), "run_blocks: bad block range");
  Tensor out = seq;
  for (std::size_t i = begin; i < end; ++i) out = block_forward(out, params.blocks[i], config);
  return out;
}

Tensor class_token_output(const Tensor& seq, const ModelParams& params,
                          const ModelConfig& config) {
  (void)config;
  return select_token(layer_norm(seq, params.final_ln_gamma, params.final_ln_beta), 0);
}

Tensor bottleneck_forward(const Tensor& cls, ModelParams& params, const ModelConfig& config,
                          bool train, Rng* rng) {
  check(!train || rng != nullptr, "bottleneck_forward: train mode requires rng");
  Tensor z = linear(cls, params.bneck_w, params.bneck_b);
  z = batch_norm_1d(z, params.bn_gamma, params.bn_beta, params.bn_running_mean,
                    params.bn_running_var, train);
  z = relu(z);
  if (train) z = dropout(z, config.dropout_rate, *rng, true);
  return z;
}

Tensor predictor_probs(const Tensor& feature, const ModelParams& params,
                       const ModelConfig& config, bool train, Rng* rng) {
  check(!train || rng != nullptr, "predictor_probs: train mode requires rng");
  Tensor h = relu(linear(feature, params.pred_w1, params.pred_b1));
  if (train) h = dropout(h, config.dropout_rate, *rng, true);
  return softmax_rows(linear(h, params.pred_w2, params.pred_b2));
}

Tensor discriminator_forward(const Tensor& feature, const ModelParams& params,
                             const ModelConfig& config, bool train, Rng* rng) {
  check(!train || rng != nullptr, "discriminator_forward: train mode requires rng");
  Tensor h = relu(linear(feature, params.disc_w1, params.disc_b1));
  if (train) h = dropout(h, config.dropout_rate, *rng, true);
  return sigmoid(linear(h, params.disc_w2, params.disc_b2));
}

Tensor discriminate(const Tensor& feature, const ModelParams& params, const ModelConfig& config,
                    double lambda_grl, bool train, Rng* rng) {
  check(lambda_grl >= 0.0, "discriminate: lambda must be nonnegative");
  return discriminator_forward(gradient_reversal(feature, lambda_grl), params, config, train, rng);
}

ClassifyOutput classify(const Tensor& images, ModelParams& params, const ModelConfig& config,
                        bool train, Rng* rng) {
  Tensor seq = run_blocks(patch_embed(images, params, config), params, config, 0,
                          config.num_blocks);
  Tensor feature = bottleneck_forward(class_token_output(seq, params, config), params, config,
                                      train, rng);
  Tensor probs = predictor_probs(feature, params, config, train, rng);
  return {probs, feature};
}

namespace {

/// alpha * (base[partner] - base) as constant data: the refinement offset is
/// detached, and the partner path contributes no gradient.
Tensor detached_offset(const Tensor& base, const std::vector<std::size_t>& partner,
                       double alpha) {
  std::size_t B = base.dim(0);
  std::size_t w = base.size() / B;
  std::vector<double> off(base.size());
  for (std::size_t b = 0; b < B; ++b) {
    const double* self_row = base.values().data() + b * w;
    const double* partner_row = base.values().data() + partner[b] * w;
    for (std::size_t i = 0; i < w; ++i) off[b * w + i] = alpha * (partner_row[i] - self_row[i]);
  }
  return Tensor::from_data(base.shape(), std::move(off));
}

struct HeadOutputs {
  Tensor probs;
  Tensor feature;
};

HeadOutputs run_head(const Tensor& seq_at_end, ModelParams& params, const ModelConfig& config,
                     bool train, Rng* rng) {
  Tensor feature = bottleneck_forward(class_token_output(seq_at_end, params, config), params,
                                      config, train, rng);
  Tensor probs = predictor_probs(feature, params, config, train, rng);
  return {probs, feature};
}

PerturbedForward perturb_from_boundary(const Tensor& boundary, const Tensor& offset,
                                       bool is_raw_input, int layer, ModelParams& params,
                                       const ModelConfig& config, bool train, Rng* rng,
                                       GradBlockMode mode) {
  bool detach_input = mode == GradBlockMode::b_l || mode == GradBlockMode::both;
  Tensor base = detach_input ? stop_gradient(boundary) : boundary;
  Tensor perturbed_boundary = add(base, offset);

  std::size_t resume = is_raw_input ? 0 : static_cast<std::size_t>(layer);
  Tensor clean_seq;
  Tensor pert_seq;
  if (is_raw_input) {
    clean_seq = patch_embed(boundary, params, config);
    pert_seq = patch_embed(perturbed_boundary, params, config);
  } else {
    clean_seq = boundary;
    pert_seq = perturbed_boundary;
  }
  clean_seq = run_blocks(clean_seq, params, config, resume, config.num_blocks);
  pert_seq = run_blocks(pert_seq, params, config, resume, config.num_blocks);

  // Clean branch first, then perturbed: fixes both the dropout stream order
  // and the batch-norm running-buffer fold order.
  HeadOutputs clean = run_head(clean_seq, params, config, train, rng);
  HeadOutputs pert = run_head(pert_seq, params, config, train, rng);

  PerturbedForward out;
  out.probs_clean = clean.probs;
  out.probs_perturbed = pert.probs;
  out.feature_clean = clean.feature;
  out.feature_perturbed = pert.feature;
  out.layer = layer;
  return out;
}

void check_layer(int layer, const ModelConfig& config) {
  check(layer == kRawInputLayer ||
            (layer >= 0 && static_cast<std::size_t>(layer) < config.num_blocks),
        "perturbation layer " + std::to_string(layer) + " out of range");
}

}  // namespace

PerturbedForward forward_with_batch_perturbation(const Tensor& images,
                                                 const std::vector<std::size_t>& partner,
                                                 int layer, double alpha, ModelParams& params,
                                                 const ModelConfig& config, bool train, Rng* rng,
                                                 GradBlockMode mode) {
  check_images(images, config);
  check_layer(layer, config);
  std::size_t B = images.dim(0);
  check(partner.size() == B, "forward_with_batch_perturbation: partner size mismatch");
  for (auto j : partner)
    check(j < B, "forward_with_batch_perturbation: partner index out of range");
  check(!train || rng != nullptr, "forward_with_batch_perturbation: train mode requires rng");

  if (layer == kRawInputLayer) {
    Tensor offset = detached_offset(images, partner, alpha);
    return perturb_from_boundary(images, offset, true, layer, params, config, train, rng, mode);
  }
  Tensor b_l = run_blocks(patch_embed(images, params, config), params, config, 0,
                          static_cast<std::size_t>(layer));
  Tensor offset = detached_offset(b_l, partner, alpha);
  return perturb_from_boundary(b_l, offset, false, layer, params, config, train, rng, mode);
}

ClassifyOutput forward_perturbed_branch(const Tensor& images,
                                        const std::vector<std::size_t>& partner, int layer,
                                        double alpha, ModelParams& params,
                                        const ModelConfig& config, bool train, Rng* rng,
                                        GradBlockMode mode) {
  check_images(images, config);
  check_layer(layer, config);
  const std::size_t B = images.dim(0);
  check(partner.size() == B, "forward_perturbed_branch: partner size mismatch");
  for (auto j : partner) check(j < B, "forward_perturbed_branch: partner index out of range");
  check(!train || rng != nullptr, "forward_perturbed_branch: train mode requires rng");

  const bool is_raw = layer == kRawInputLayer;
  Tensor boundary = is_raw ? images
                           : run_blocks(patch_embed(images, params, config), params, config, 0,
                                        static_cast<std::size_t>(layer));
  Tensor offset = detached_offset(boundary, partner, alpha);
  const bool detach_input = mode == GradBlockMode::b_l || mode == GradBlockMode::both;
  Tensor base = detach_input ? stop_gradient(boundary) : boundary;
  Tensor seq = add(base, offset);
  if (is_raw) seq = patch_embed(seq, params, config);
  seq = run_blocks(seq, params, config, is_raw ? 0 : static_cast<std::size_t>(layer),
                   config.num_blocks);
  HeadOutputs head = run_head(seq, params, config, train, rng);
  return {head.probs, head.feature};
}

PerturbedForward forward_with_perturbation(const Tensor& images, const Tensor& partner_images,
                                           int layer, double alpha, ModelParams& params,
                                           const ModelConfig& config, bool train, Rng* rng,
                                           GradBlockMode mode) {
  check_images(images, config);
  check_images(partner_images, config);
  check(images.dim(0) == partner_images.dim(0),
        "forward_with_perturbation: partner batch size mismatch");
  check_layer(layer, config);
  check(!train || rng != nullptr, "forward_with_perturbation: train mode requires rng");

  auto offset_between = [alpha](const Tensor& self_vals, const Tensor& partner_vals) {
    std::vector<double> off(self_vals.size());
    for (std::size_t i = 0; i < off.size(); ++i)
      off[i] = alpha * (partner_vals.values()[i] - self_vals.values()[i]);
    return Tensor::from_data(self_vals.shape(), std::move(off));
  };

  if (layer == kRawInputLayer) {
    Tensor offset = offset_between(images, partner_images);
    return perturb_from_boundary(images, offset, true, layer, params, config, train, rng, mode);
  }
  Tensor b_l = run_blocks(patch_embed(images, params, config), params, config, 0,
                          static_cast<std::size_t>(layer));
  // The partner prefix only feeds the detached offset; run it on a throwaway
  // tape so the live tape carries no dead branch.
  Tensor b_l_partner;
  {
    Tape scratch;
    Tape::Scope scope(scratch);
    b_l_partner = run_blocks(patch_embed(partner_images, params, config), params, config, 0,
                             static_cast<std::size_t>(layer));
  }
  Tensor offset = offset_between(b_l, b_l_partner.clone_detached());
  return perturb_from_boundary(b_l, offset, false, layer, params, config, train, rng, mode);
}

}  // namespace ssrt
