// SPDX-License-Identifier: Apache-2.0
#include "ssrt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ssrt/losses.hpp"
#include "ssrt/optim.hpp"
#include "ssrt/safe_training.hpp"

namespace ssrt {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  check(probs.shape().size() == 2, "argmax expects a rank-2 tensor");
  const std::size_t rows = probs.dim(0), cols = probs.dim(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = probs.values().data() + i * cols;
    out[i] = std::size_t(std::max_element(row, row + cols) - row);
  }
  return out;
}

double accuracy_of(const std::vector<std::size_t>& predicted,
                   const std::vector<std::size_t>& truth) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++correct;
  return double(correct) / double(predicted.size());
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> rows(d.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

constexpr std::size_t kEvalChunk = 64;

// Clean boundary representation that perturbation targets: the token sequence
// entering block `layer`, or the raw pixels for the sentinel layer.
Tensor boundary_rep(const Tensor& images, int layer, ModelParams& params,
                    const ModelConfig& config) {
  if (layer == kRawInputLayer) return images;
  return run_blocks(patch_embed(images, params, config), params, config, 0,
                    std::size_t(layer));
}

}  // namespace

EvalReport evaluate(ModelParams& params, const ModelConfig& config, const Dataset& data) {
  check(data.size() > 0, "evaluating an empty dataset");
  check(data.image_size == config.image_size && data.channels == config.channels &&
            data.num_classes == config.num_classes,
        "dataset does not match the model config");
  EvalReport report;
  report.sample_count = data.size();
  std::vector<std::size_t> per_class_total(config.num_classes, 0);
  std::vector<std::size_t> per_class_correct(config.num_classes, 0);
  const auto rows = all_rows(data);
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(start + kEvalChunk, rows.size());
    const std::vector<std::size_t> chunk(rows.begin() + std::ptrdiff_t(start),
                                         rows.begin() + std::ptrdiff_t(stop));
    const Tensor images = images_tensor(data, chunk);
    const ClassifyOutput out = classify(images, params, config, false, nullptr);
    const auto predicted = argmax_rows(out.probs);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const std::size_t truth = data.labels[chunk[k]];
      ++per_class_total[truth];
      if (predicted[k] == truth) ++per_class_correct[truth];
    }
  }
  std::size_t correct = 0;
  report.per_class.resize(config.num_classes, 0.0);
  for (std::size_t k = 0; k < config.num_classes; ++k) {
    correct += per_class_correct[k];
    report.per_class[k] = per_class_total[k] == 0
                              ? 0.0
                              : double(per_class_correct[k]) / double(per_class_total[k]);
  }
  report.overall = double(correct) / double(data.size());
  return report;
}

std::pair<Dataset, Dataset> obtain_datasets(const RunConfig& config) {
  if (!config.data_dir.empty()) {
    Dataset source = load_dataset(config.data_dir + "/source.ssrtdata", Domain::source);
    Dataset target = load_dataset(config.data_dir + "/target.ssrtdata", Domain::target);
    check(source.image_size == target.image_size && source.channels == target.channels &&
              source.num_classes == target.num_classes,
          "source/target dataset dims disagree");
    return {std::move(source), std::move(target)};
  }
  return generate_domain_pair(config.data);
}

TrainOutput train_ssrt(const RunConfig& config, TrainLog& log) {
  config.validate();
  auto [source, target] = obtain_datasets(config);

  ModelConfig model = config.model_config();
  model.image_size = source.image_size;
  model.channels = source.channels;
  model.num_classes = source.num_classes;
  model.validate();
  check(config.batch_size <= std::min(source.size(), target.size()),
        "invalid-config: batch size exceeds dataset size");

  auto [train_src, eval_src] = split_train_eval(source);
  auto [train_tgt, eval_tgt] = split_train_eval(target);

  const Rng root(config.seed);
  Rng init_rng = root.fork("init");
  ModelParams params = init_params(model, init_rng);

  std::vector<ParamGroup> groups;
  groups.push_back({params.backbone_params(), 0.1});  // backbone at lr0 / 10
  std::vector<Tensor> head = params.head_params();
  for (const Tensor& t : params.disc_params()) head.push_back(t);
  groups.push_back({std::move(head), 1.0});
  SgdMomentum optimizer(groups, config.lr0, 0.9);

  SafeTrainer safe(config.T, config.L, params, optimizer);

  Batcher src_batches(train_src, config.batch_size, root.fork("src_batches"), true);
  Batcher tgt_batches(train_tgt, config.batch_size, root.fork("tgt_batches"), false);

  double acc_src = evaluate(params, model, eval_src).overall;
  double acc_tgt = evaluate(params, model, eval_tgt).overall;

  const bool sr_active = config.target_loss == TargetLoss::sr && config.beta > 0.0;
  const bool mi_active = config.target_loss == TargetLoss::mi && config.beta > 0.0;
  const bool need_target_branch = sr_active || mi_active || config.adversarial;

  log.rows.reserve(config.max_iter);
  for (std::size_t iter = 1; iter <= config.max_iter; ++iter) {
    const Rng it = root.fork("iter").fork(iter);
    const Batch src = src_batches.next();
    const Batch tgt = tgt_batches.next();
    const double r = safe.ramp(iter);
    const auto [alpha_r, beta_r] = apply_ramp(config.alpha, config.beta, r);

    double ce_value = 0.0, d_value = 0.0, sr_value = 0.0;
    std::size_t div_value = 1;
    try {
      Rng drop_main = it.fork("drop_main");
      Tape tape;
      Tape::Scope scope(tape);

      const std::size_t n_src = src.indices.size();
      const std::size_t tgt_rows = tgt.indices.size();
      Tensor loss_ce;
      Tensor probs_tgt_clean;
      Tensor all_feature;
      // One concatenated forward when the step consumes target outputs: the
      // head's batch norm then folds joint statistics, so the discriminator
      // compares rows under one shared normalization instead of per-domain
      // ones that would erase the very shift it must detect.
      if (need_target_branch) {
        const ClassifyOutput all_out =
            classify(concat_rows(src.images, tgt.images), params, model, true, &drop_main);
        loss_ce = cross_entropy(slice_rows(all_out.probs, 0, n_src), src.labels);
        probs_tgt_clean = slice_rows(all_out.probs, n_src, tgt_rows);
        all_feature = all_out.feature;
      } else {
        const ClassifyOutput src_out = classify(src.images, params, model, true, &drop_main);
        loss_ce = cross_entropy(src_out.probs, src.labels);
      }
      ce_value = loss_ce.item();

      Tensor loss_tgt = Tensor::scalar(0.0);
      // A one-row tail batch has no partner to offset toward; SR skips it.
      if (sr_active && tgt_rows >= 2) {
        Rng layer_rng = it.fork("layer");
        const int layer =
            config.perturb_layers[layer_rng.uniform_index(config.perturb_layers.size())];
        Rng partner_rng = it.fork("partner");
        std::vector<std::size_t> partner(tgt_rows);
        for (std::size_t i = 0; i < partner.size(); ++i)
          partner[i] = partner_rng.partner_index(partner.size(), i);
        int omega = 1;
        if (config.omega_mode == OmegaMode::bernoulli) {
          Rng omega_rng = it.fork("omega");
          omega = omega_rng.bernoulli(0.5) ? 1 : 0;
        } else {
          omega = config.omega_mode == OmegaMode::fixed1 ? 1 : 0;
        }
        const bool detach_teacher = config.grad_block_mode == GradBlockMode::teacher ||
                                    config.grad_block_mode == GradBlockMode::both;
        Rng drop_pert = it.fork("drop_pert");
        const ClassifyOutput pert = forward_perturbed_branch(
            tgt.images, partner, layer, alpha_r, params, model, true, &drop_pert,
            config.grad_block_mode);
        loss_tgt = self_refinement_loss(probs_tgt_clean, pert.probs, omega, config.epsilon,
                                        detach_teacher);
        sr_value = loss_tgt.item();
      } else if (mi_active) {
        loss_tgt = mutual_information_loss(probs_tgt_clean);
        sr_value = loss_tgt.item();
      }

      Tensor loss_d = Tensor::scalar(0.0);
      if (config.adversarial) {
        const double lambda_grl = grl_schedule(iter, config.max_iter);
        Rng drop_disc = it.fork("drop_disc");
        const Tensor d_all = discriminate(all_feature, params, model, lambda_grl, true, &drop_disc);
        loss_d = domain_adversarial_loss(slice_rows(d_all, 0, n_src),
                                         slice_rows(d_all, n_src, tgt_rows));
        d_value = loss_d.item();
      }

      const LossBundle bundle = make_loss_bundle(loss_ce, loss_d, loss_tgt, beta_r);
      tape.backward(bundle.total);
      optimizer.step();

      // Diversity from un-perturbed target predictions; source-only configs
      // measure it with a separate eval-mode forward.
      std::vector<std::size_t> predicted;
      if (need_target_branch) {
        predicted = argmax_rows(probs_tgt_clean);
      } else {
        const ClassifyOutput probe = classify(tgt.images, params, model, false, nullptr);
        predicted = argmax_rows(probe.probs);
      }
      div_value = diversity(predicted);
    } catch (const NonFiniteError&) {
      LogRow row{iter, ce_value, d_value, sr_value, r, 1, acc_src, acc_tgt, "nonfinite"};
      log.rows.push_back(std::move(row));
      throw;
    }

    safe.record_diversity(div_value);
    std::string event;
    if (config.safe_training) {
      if (const auto restored = safe.on_iteration(iter)) {
        event = "restore:T_r=" + std::to_string(restored->ramp_length) +
                ":t_r=" + std::to_string(restored->ramp_start);
      }
    }

    if (iter % config.eval_interval == 0 || iter == config.max_iter) {
      acc_src = evaluate(params, model, eval_src).overall;
      acc_tgt = evaluate(params, model, eval_tgt).overall;
    }
    log.rows.push_back(
        LogRow{iter, ce_value, d_value, sr_value, r, div_value, acc_src, acc_tgt, event});
  }

  TrainOutput out{std::move(params), model, acc_src, acc_tgt};
  return out;
}

double robustness_probe(ModelParams& params, const ModelConfig& config, const Dataset& data,
                        int layer, double alpha_test, std::size_t trials, std::uint64_t seed) {
  check(alpha_test >= 0.0, "alpha_test must be nonnegative");
  check(trials >= 1, "need at least one trial");
  check(data.size() >= 2, "probe needs at least two samples");
  const Rng root(seed);
  double clean_acc = 0.0;
  double perturbed_sum = 0.0;
  const auto rows = all_rows(data);
  std::vector<std::size_t> truth(data.labels.begin(), data.labels.end());
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng trial_rng = root.fork(trial);
    std::vector<std::size_t> predicted_clean, predicted_pert;
    for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
      const std::size_t stop = std::min(start + kEvalChunk, rows.size());
      const std::vector<std::size_t> chunk(rows.begin() + std::ptrdiff_t(start),
                                           rows.begin() + std::ptrdiff_t(stop));
      // Partners are drawn from the whole dataset, never the sample itself.
      std::vector<std::size_t> partner(chunk.size());
      for (std::size_t k = 0; k < chunk.size(); ++k)
        partner[k] = trial_rng.partner_index(data.size(), chunk[k]);
      const Tensor images = images_tensor(data, chunk);
      const Tensor partner_images = images_tensor(data, partner);
      const PerturbedForward pf = forward_with_perturbation(
          images, partner_images, layer, alpha_test, params, config, false, nullptr);
      const auto clean = argmax_rows(pf.probs_clean);
      const auto pert = argmax_rows(pf.probs_perturbed);
      predicted_clean.insert(predicted_clean.end(), clean.begin(), clean.end());
      predicted_pert.insert(predicted_pert.end(), pert.begin(), pert.end());
    }
    if (trial == 0) clean_acc = accuracy_of(predicted_clean, truth);
    perturbed_sum += accuracy_of(predicted_pert, truth);
  }
  return clean_acc - perturbed_sum / double(trials);
}

InversionResult invert_perturbation(ModelParams& params, const ModelConfig& config,
                                    const Tensor& x, const Tensor& x_r, int layer,
                                    double alpha, std::size_t steps, double lr_vis) {
  check(steps >= 1, "need at least one inversion step");
  check(lr_vis > 0.0, "lr_vis must be positive");
  check(x.shape().size() == 4 && x.dim(0) == 1 && x_r.shape() == x.shape(),
        "inversion takes single images [1, H, W, C]");

  // The perturbed representation to invert, as constant data.
  const Tensor b_x = boundary_rep(x, layer, params, config);
  const Tensor b_r = boundary_rep(x_r, layer, params, config);
  std::vector<double> blended(b_x.size());
  for (std::size_t i = 0; i < blended.size(); ++i)
    blended[i] = b_x.values()[i] + alpha * (b_r.values()[i] - b_x.values()[i]);
  const Tensor b_tilde = Tensor::from_data(b_x.shape(), std::move(blended));

  std::vector<double> pixels(x.values().begin(), x.values().end());
  Tensor x_vis = Tensor::from_data(x.shape(), std::move(pixels), true);

  auto objective_at = [&](const Tensor& candidate) {
    const Tensor rep = boundary_rep(candidate, layer, params, config);
    return sum(mul(sub(rep, b_tilde), sub(rep, b_tilde))).item();
  };

  InversionResult result;
  double lr = lr_vis;
  double current = objective_at(x_vis);
  result.trace.push_back(current);
  const double initial = current;

  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<double> grad;
    {
      Tape tape;
      Tape::Scope scope(tape);
      const Tensor rep = boundary_rep(x_vis, layer, params, config);
      const Tensor diff = sub(rep, b_tilde);
      const Tensor obj = sum(mul(diff, diff));
      tape.backward(obj);
      grad.assign(x_vis.grad().begin(), x_vis.grad().end());
      x_vis.clear_grad();
    }
    // Backtracking line search, capped at lr_vis.
    double accepted = current;
    for (int backoff = 0; backoff < 30; ++backoff) {
      std::vector<double> stepped(x_vis.values().begin(), x_vis.values().end());
      for (std::size_t i = 0; i < stepped.size(); ++i) stepped[i] -= lr * grad[i];
      Tensor candidate = Tensor::from_data(x_vis.shape(), std::move(stepped));
      const double cand_obj = objective_at(candidate);
      if (cand_obj <= current || backoff == 29) {
        std::copy(candidate.values().begin(), candidate.values().end(),
                  x_vis.values_mut().begin());
        accepted = cand_obj;
        break;
      }
      lr *= 0.5;
    }
    current = accepted;
    result.trace.push_back(current);
    if (initial > 0.0 && current > 10.0 * initial)
      throw DivergedError("diverged: inversion objective exceeded 10x its initial value; "
                          "use a smaller lr_vis");
    lr = std::min(lr * 1.2, lr_vis);
  }

  std::vector<double> final_pixels(x_vis.values().begin(), x_vis.values().end());
  for (double& v : final_pixels) v = std::clamp(v, 0.0, 1.0);
  result.image = Tensor::from_data(x.shape(), std::move(final_pixels));
  return result;
}

}  // namespace ssrt
