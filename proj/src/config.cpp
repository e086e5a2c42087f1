// SPDX-License-Identifier: Apache-2.0
#include "ssrt/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ssrt/io_format.hpp"

namespace ssrt {

namespace {

void check(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    check(used == value.size(), "invalid-config: bad number for " + key);
    return v;
  } catch (const std::logic_error&) {
    throw ContractError("invalid-config: bad number for " + key + ": '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    check(!value.empty() && value[0] != '-', "invalid-config: " + key + " must be nonnegative");
    const std::uint64_t v = std::stoull(value, &used);
    check(used == value.size(), "invalid-config: bad integer for " + key);
    return v;
  } catch (const std::logic_error&) {
    throw ContractError("invalid-config: bad integer for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ContractError("invalid-config: bad on/off value for " + key + ": '" + value + "'");
}

std::vector<int> parse_layer_list(const std::string& value) {
  std::vector<int> layers;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if (item == "raw") {
      layers.push_back(kRawInputLayer);
      continue;
    }
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      check(used == item.size(), "invalid-config: bad layer '" + item + "'");
      layers.push_back(v);
    } catch (const std::logic_error&) {
      throw ContractError("invalid-config: bad layer '" + item + "'");
    }
  }
  check(!layers.empty(), "invalid-config: model.perturb_layers must not be empty");
  return layers;
}

std::string format_f(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string omega_mode_name(OmegaMode mode) {
  switch (mode) {
    case OmegaMode::bernoulli: return "bernoulli";
    case OmegaMode::fixed0: return "fixed0";
    case OmegaMode::fixed1: return "fixed1";
  }
  throw ContractError("invalid-config: unknown omega mode");
}

OmegaMode parse_omega_mode(const std::string& name) {
  if (name == "bernoulli") return OmegaMode::bernoulli;
  if (name == "fixed0") return OmegaMode::fixed0;
  if (name == "fixed1") return OmegaMode::fixed1;
  throw ContractError("invalid-config: unknown omega mode '" + name + "'");
}

std::string target_loss_name(TargetLoss loss) {
  switch (loss) {
    case TargetLoss::sr: return "sr";
    case TargetLoss::mi: return "mi";
    case TargetLoss::none: return "none";
  }
  throw ContractError("invalid-config: unknown target loss");
}

TargetLoss parse_target_loss(const std::string& name) {
  if (name == "sr") return TargetLoss::sr;
  if (name == "mi") return TargetLoss::mi;
  if (name == "none") return TargetLoss::none;
  throw ContractError("invalid-config: unknown target loss '" + name + "'");
}

std::string grad_block_mode_name(GradBlockMode mode) {
  switch (mode) {
    case GradBlockMode::none: return "none";
    case GradBlockMode::teacher: return "teacher";
    case GradBlockMode::b_l: return "b_l";
    case GradBlockMode::both: return "both";
  }
  throw ContractError("invalid-config: unknown grad block mode");
}

GradBlockMode parse_grad_block_mode(const std::string& name) {
  if (name == "none") return GradBlockMode::none;
  if (name == "teacher") return GradBlockMode::teacher;
  if (name == "b_l") return GradBlockMode::b_l;
  if (name == "both") return GradBlockMode::both;
  throw ContractError("invalid-config: unknown grad block mode '" + name + "'");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.image_size = data.image_size;
  m.channels = data.channels;
  m.patch_size = patch_size;
  m.embed_dim = embed_dim;
  m.num_blocks = num_blocks;
  m.num_heads = num_heads;
  m.mlp_ratio = mlp_ratio;
  m.num_classes = data.num_classes;
  m.dropout_rate = dropout;
  m.bottleneck_dim = bottleneck_dim;
  m.perturb_layers = perturb_layers;
  return m;
}

void RunConfig::validate() const {
  if (force_alpha) {
    check(std::isfinite(alpha) && alpha >= 0.0, "invalid-config: alpha must be finite");
  } else {
    check(alpha >= 0.0 && alpha <= 1.0,
          "invalid-config: alpha outside [0, 1] (set force_alpha=on to override)");
  }
  check(epsilon >= 0.0 && epsilon <= 1.0, "invalid-config: epsilon outside [0, 1]");
  check(std::isfinite(beta) && beta >= 0.0, "invalid-config: beta must be nonnegative");
  check(L >= 1, "invalid-config: L must be at least 1");
  check(T >= 1 && T % (std::size_t(1) << L) == 0,
        "invalid-config: T must be divisible by 2^L");
  check(lr0 > 0.0 && std::isfinite(lr0), "invalid-config: lr0 must be positive");
  check(batch_size >= 2, "invalid-config: batch size must be at least 2");
  check(max_iter >= 1, "invalid-config: max_iter must be at least 1");
  check(eval_interval >= 1, "invalid-config: eval_interval must be at least 1");
  if (data_dir.empty()) {
    data.validate();
    model_config().validate();
  }
}

void set_config_key(RunConfig& c, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  check(eq != std::string::npos, "invalid-config: expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  check(!key.empty(), "invalid-config: empty key");

  if (key == "data.dir") c.data_dir = value;
  else if (key == "data.classes") c.data.num_classes = parse_u64(key, value);
  else if (key == "data.samples") c.data.samples_per_domain = parse_u64(key, value);
  else if (key == "data.image_size") c.data.image_size = parse_u64(key, value);
  else if (key == "data.channels") c.data.channels = parse_u64(key, value);
  else if (key == "data.shift") c.data.shift_kind = parse_shift_kind(value);
  else if (key == "data.severity") c.data.severity = parse_double(key, value);
  else if (key == "data.seed") c.data.seed = parse_u64(key, value);
  else if (key == "model.patch_size") c.patch_size = parse_u64(key, value);
  else if (key == "model.embed_dim") c.embed_dim = parse_u64(key, value);
  else if (key == "model.blocks") c.num_blocks = parse_u64(key, value);
  else if (key == "model.heads") c.num_heads = parse_u64(key, value);
  else if (key == "model.mlp_ratio") c.mlp_ratio = parse_u64(key, value);
  else if (key == "model.dropout") c.dropout = parse_double(key, value);
  else if (key == "model.bottleneck") c.bottleneck_dim = parse_u64(key, value);
  else if (key == "model.perturb_layers") c.perturb_layers = parse_layer_list(value);
  else if (key == "alpha") c.alpha = parse_double(key, value);
  else if (key == "beta") c.beta = parse_double(key, value);
  else if (key == "epsilon") c.epsilon = parse_double(key, value);
  else if (key == "T") c.T = parse_u64(key, value);
  else if (key == "L") c.L = parse_u64(key, value);
  else if (key == "safe_training") c.safe_training = parse_bool(key, value);
  else if (key == "omega_mode") c.omega_mode = parse_omega_mode(value);
  else if (key == "grad_block_mode") c.grad_block_mode = parse_grad_block_mode(value);
  else if (key == "target_loss") c.target_loss = parse_target_loss(value);
  else if (key == "adversarial") c.adversarial = parse_bool(key, value);
  else if (key == "force_alpha") c.force_alpha = parse_bool(key, value);
  else if (key == "lr0") c.lr0 = parse_double(key, value);
  else if (key == "batch_size") c.batch_size = parse_u64(key, value);
  else if (key == "max_iter") c.max_iter = parse_u64(key, value);
  else if (key == "eval_interval") c.eval_interval = parse_u64(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "out") c.out = value;
  else throw ContractError("invalid-config: unknown key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    set_config_key(c, line);
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io-error: cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "data.dir=" << c.data_dir << "\n";
  out << "data.classes=" << c.data.num_classes << "\n";
  out << "data.samples=" << c.data.samples_per_domain << "\n";
  out << "data.image_size=" << c.data.image_size << "\n";
  out << "data.channels=" << c.data.channels << "\n";
  out << "data.shift=" << shift_kind_name(c.data.shift_kind) << "\n";
  out << "data.severity=" << format_f(c.data.severity) << "\n";
  out << "data.seed=" << c.data.seed << "\n";
  out << "model.patch_size=" << c.patch_size << "\n";
  out << "model.embed_dim=" << c.embed_dim << "\n";
  out << "model.blocks=" << c.num_blocks << "\n";
  out << "model.heads=" << c.num_heads << "\n";
  out << "model.mlp_ratio=" << c.mlp_ratio << "\n";
  out << "model.dropout=" << format_f(c.dropout) << "\n";
  out << "model.bottleneck=" << c.bottleneck_dim << "\n";
  out << "model.perturb_layers=";
  for (std::size_t i = 0; i < c.perturb_layers.size(); ++i)
    out << (i ? "," : "") << c.perturb_layers[i];
  out << "\n";
  out << "alpha=" << format_f(c.alpha) << "\n";
  out << "beta=" << format_f(c.beta) << "\n";
  out << "epsilon=" << format_f(c.epsilon) << "\n";
  out << "T=" << c.T << "\n";
  out << "L=" << c.L << "\n";
  out << "safe_training=" << (c.safe_training ? "on" : "off") << "\n";
  out << "omega_mode=" << omega_mode_name(c.omega_mode) << "\n";
  out << "grad_block_mode=" << grad_block_mode_name(c.grad_block_mode) << "\n";
  out << "target_loss=" << target_loss_name(c.target_loss) << "\n";
  out << "adversarial=" << (c.adversarial ? "on" : "off") << "\n";
  out << "force_alpha=" << (c.force_alpha ? "on" : "off") << "\n";
  out << "lr0=" << format_f(c.lr0) << "\n";
  out << "batch_size=" << c.batch_size << "\n";
  out << "max_iter=" << c.max_iter << "\n";
  out << "eval_interval=" << c.eval_interval << "\n";
  out << "seed=" << c.seed << "\n";
  out << "out=" << c.out << "\n";
  return out.str();
}

}  // namespace ssrt
