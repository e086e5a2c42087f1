// SPDX-License-Identifier: Apache-2.0
//
// ssrt: train and probe safe self-refinement models on synthetic shifted
// image tasks. Subcommands: gen-data, train, eval, probe-robustness, invert,
// report. Every failure exits nonzero after printing a single
// "error: <kind>: <detail>" line on stderr.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssrt/checkpoint.hpp"
#include "ssrt/config.hpp"
#include "ssrt/io_format.hpp"
#include "ssrt/losses.hpp"
#include "ssrt/report.hpp"
#include "ssrt/train.hpp"

namespace {

using namespace ssrt;

std::string strip(const std::string& line) {
  std::string s = line.substr(0, line.find('#'));
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

/// Reads a flat key=value dataset spec. Keys may be bare (num_classes) or
/// dotted (data.num_classes); values share the run-config grammar.
DatasetSpec read_dataset_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io-error: cannot open spec file: " + path);
  RunConfig scratch;
  std::string line;
  while (std::getline(in, line)) {
    const std::string s = strip(line);
    if (s.empty()) continue;
    set_config_key(scratch, s.rfind("data.", 0) == 0 ? s : "data." + s);
  }
  return scratch.data;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io-error: cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("io-error: short write: " + path);
}

std::uint64_t env_seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("SSRT_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0')
    throw ContractError("invalid-config: SSRT_SEED is not an integer: " + std::string(env));
  return static_cast<std::uint64_t>(v);
}

struct GenDataArgs {
  std::string spec_file;
  std::string out;
  // Flag overrides; -1 sentinels mean "not given".
  std::int64_t classes = -1;
  std::int64_t samples = -1;
  std::int64_t image_size = -1;
  std::int64_t channels = -1;
  std::string shift;
  double severity = -1.0;
  std::int64_t seed = -1;
};

int run_gen_data(const GenDataArgs& a) {
  DatasetSpec spec;
  if (!a.spec_file.empty()) spec = read_dataset_spec(a.spec_file);
  if (a.classes >= 0) spec.num_classes = std::size_t(a.classes);
  if (a.samples >= 0) spec.samples_per_domain = std::size_t(a.samples);
  if (a.image_size >= 0) spec.image_size = std::size_t(a.image_size);
  if (a.channels >= 0) spec.channels = std::size_t(a.channels);
  if (!a.shift.empty()) spec.shift_kind = parse_shift_kind(a.shift);
  if (a.severity >= 0.0) spec.severity = a.severity;
  if (a.seed >= 0) spec.seed = std::uint64_t(a.seed);

  const auto [source, target] = generate_domain_pair(spec);
  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw IoError("io-error: cannot create directory: " + a.out);
  const std::string src_path = a.out + "/source.ssrtdata";
  const std::string tgt_path = a.out + "/target.ssrtdata";
  save_dataset(source, src_path);
  save_dataset(target, tgt_path);
  std::printf("source=%s\n", src_path.c_str());
  std::printf("target=%s\n", tgt_path.c_str());
  std::printf("classes=%zu\nsamples_per_domain=%zu\nshift=%s\nseverity=%s\n", spec.num_classes,
              spec.samples_per_domain, shift_kind_name(spec.shift_kind).c_str(),
              format_double(spec.severity).c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
  RunConfig config = load_run_config(config_path);
  for (const std::string& s : sets) set_config_key(config, s);
  config.seed = env_seed_override(config.seed);
  config.out = out_dir;
  config.validate();

  TrainLog log;
  TrainOutput result = [&] {
    try {
      return train_ssrt(config, log);
    } catch (...) {
      // Keep the partial log around for post-mortems, then fail as usual.
      if (!log.rows.empty()) {
        try {
          emit_report(log, out_dir);
        } catch (...) {
        }
      }
      throw;
    }
  }();

  emit_report(log, out_dir);
  const std::string ckpt_path = out_dir + "/checkpoint.ssrt";
  save_checkpoint(result.params, result.model, ckpt_path);
  write_text_file(out_dir + "/config_used.cfg", serialize_run_config(config));

  std::size_t restores = 0;
  for (const LogRow& row : log.rows)
    if (row.event.rfind("restore:", 0) == 0) ++restores;
  std::printf("final_acc_src=%s\n", format_double(result.final_acc_src).c_str());
  std::printf("final_acc_tgt=%s\n", format_double(result.final_acc_tgt).c_str());
  std::printf("restores=%zu\n", restores);
  std::printf("log=%s/train_log.csv\n", out_dir.c_str());
  std::printf("checkpoint=%s\n", ckpt_path.c_str());
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_path);
  const EvalReport rep = evaluate(ckpt.params, ckpt.config, data);
  std::printf("samples=%zu\n", rep.sample_count);
  std::printf("acc_overall=%s\n", format_double(rep.overall).c_str());
  for (std::size_t k = 0; k < rep.per_class.size(); ++k)
    std::printf("acc_class_%zu=%s\n", k, format_double(rep.per_class[k]).c_str());
  return 0;
}

int run_probe(const std::string& ckpt_path, const std::string& data_path, int layer, double alpha,
              std::size_t trials, std::uint64_t seed) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_path);
  const double drop = robustness_probe(ckpt.params, ckpt.config, data, layer, alpha, trials, seed);
  std::printf("layer=%d\nalpha=%s\ntrials=%zu\n", layer, format_double(alpha).c_str(), trials);
  std::printf("drop=%s\n", format_double(drop).c_str());
  return 0;
}

int run_invert(const std::string& ckpt_path, const std::string& data_path, std::size_t index,
               std::size_t partner, int layer, double alpha, std::size_t steps, double lr_vis,
               const std::string& out_file) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(data_path);
  if (index >= data.size() || partner >= data.size())
    throw ContractError("--index/--partner out of range for dataset of " +
                        std::to_string(data.size()));
  const Tensor x = images_tensor(data, {index});
  const Tensor x_r = images_tensor(data, {partner});
  const InversionResult res =
      invert_perturbation(ckpt.params, ckpt.config, x, x_r, layer, alpha, steps, lr_vis);

  // How closely the reconstruction's prediction tracks the perturbed one.
  const PerturbedForward pf =
      forward_with_perturbation(x, x_r, layer, alpha, ckpt.params, ckpt.config, false, nullptr);
  const ClassifyOutput vis = classify(res.image, ckpt.params, ckpt.config, false, nullptr);
  const double kl_orig = kl_div(pf.probs_perturbed, pf.probs_clean).item();
  const double kl_vis = kl_div(pf.probs_perturbed, vis.probs).item();

  std::printf("objective_initial=%s\n", format_double(res.trace.front()).c_str());
  std::printf("objective_final=%s\n", format_double(res.trace.back()).c_str());
  std::printf("kl_perturbed_vs_clean=%s\n", format_double(kl_orig).c_str());
  std::printf("kl_perturbed_vs_reconstruction=%s\n", format_double(kl_vis).c_str());
  if (!out_file.empty()) {
    // One CSV row per image row; W*C values per row.
    std::string text;
    const std::size_t H = data.image_size, W = data.image_size, C = data.channels;
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t i = 0; i < W * C; ++i) {
        if (i > 0) text += ',';
        text += format_double(res.image.values()[r * W * C + i]);
      }
      text += '\n';
    }
    write_text_file(out_file, text);
    std::printf("reconstruction=%s\n", out_file.c_str());
  }
  return 0;
}

int run_report(const std::string& log_path, const std::string& out_dir) {
  const TrainLog log = read_train_log_csv(log_path);
  emit_report(log, out_dir);
  std::printf("log=%s/train_log.csv\n", out_dir.c_str());
  std::printf("charts=%s/diversity.svg,%s/accuracy.svg\n", out_dir.c_str(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe self-refinement for unsupervised domain adaptation on synthetic tasks"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "Generate a source/target dataset pair");
  cmd_gen->add_option("--spec", gen.spec_file, "Flat key=value dataset spec file");
  cmd_gen->add_option("--classes", gen.classes, "Number of classes");
  cmd_gen->add_option("--samples", gen.samples, "Samples per domain");
  cmd_gen->add_option("--image-size", gen.image_size, "Image height/width");
  cmd_gen->add_option("--channels", gen.channels, "Image channels");
  cmd_gen->add_option("--shift", gen.shift, "Shift kind: none|invert|rotate90|noise|contrast");
  cmd_gen->add_option("--severity", gen.severity, "Shift severity in [0,1]");
  cmd_gen->add_option("--seed", gen.seed, "Generation seed");
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();

  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  CLI::App* cmd_train = app.add_subcommand("train", "Train a model from a config file");
  cmd_train->add_option("--config", train_config, "Run config file")->required();
  cmd_train->add_option("--set", train_sets, "Override one config key: key=value");
  cmd_train->add_option("--out", train_out, "Output directory")->required();
  cmd_train->footer("The SSRT_SEED environment variable overrides the configured seed.");

  std::string eval_ckpt, eval_data;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  cmd_eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  cmd_eval->add_option("--data", eval_data, "Dataset file")->required();

  std::string probe_ckpt, probe_data;
  int probe_layer = 0;
  double probe_alpha = 0.3;
  std::size_t probe_trials = 6;
  std::uint64_t probe_seed = 0;
  CLI::App* cmd_probe =
      app.add_subcommand("probe-robustness", "Accuracy drop under test-time perturbation");
  cmd_probe->add_option("--ckpt", probe_ckpt, "Checkpoint file")->required();
  cmd_probe->add_option("--data", probe_data, "Dataset file")->required();
  cmd_probe->add_option("--layer", probe_layer, "Perturbation layer (-1 for raw input)")
      ->required();
  cmd_probe->add_option("--alpha", probe_alpha, "Test-time offset strength")->required();
  cmd_probe->add_option("--trials", probe_trials, "Partner draws to average over");
  cmd_probe->add_option("--seed", probe_seed, "Probe seed");

  std::string inv_ckpt, inv_data, inv_out;
  std::size_t inv_index = 0, inv_partner = 0, inv_steps = 500;
  int inv_layer = 0;
  double inv_alpha = 0.3, inv_lr = 10.0;
  CLI::App* cmd_inv =
      app.add_subcommand("invert", "Reconstruct the image a perturbed representation encodes");
  cmd_inv->add_option("--ckpt", inv_ckpt, "Checkpoint file")->required();
  cmd_inv->add_option("--data", inv_data, "Dataset file")->required();
  cmd_inv->add_option("--index", inv_index, "Sample index")->required();
  cmd_inv->add_option("--partner", inv_partner, "Partner sample index")->required();
  cmd_inv->add_option("--layer", inv_layer, "Perturbation layer (-1 for raw input)")->required();
  cmd_inv->add_option("--alpha", inv_alpha, "Offset strength")->required();
  cmd_inv->add_option("--steps", inv_steps, "Descent steps");
  cmd_inv->add_option("--lr", inv_lr, "Descent step size cap (line search backs off)");
  cmd_inv->add_option("--out", inv_out, "Write the reconstructed image as CSV");

  std::string rep_log, rep_out;
  CLI::App* cmd_rep = app.add_subcommand("report", "Regenerate charts from a training log");
  cmd_rep->add_option("--log", rep_log, "train_log.csv path")->required();
  cmd_rep->add_option("--out", rep_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (cmd_gen->parsed()) return run_gen_data(gen);
    if (cmd_train->parsed()) return run_train(train_config, train_sets, train_out);
    if (cmd_eval->parsed()) return run_eval(eval_ckpt, eval_data);
    if (cmd_probe->parsed())
      return run_probe(probe_ckpt, probe_data, probe_layer, probe_alpha, probe_trials,
                       probe_seed);
    if (cmd_inv->parsed())
      return run_invert(inv_ckpt, inv_data, inv_index, inv_partner, inv_layer, inv_alpha,
                        inv_steps, inv_lr, inv_out);
    if (cmd_rep->parsed()) return run_report(rep_log, rep_out);
    return 1;  // unreachable: require_subcommand
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: invalid-args: %s\n", e.what());
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
