// SPDX-License-Identifier: Apache-2.0
#include "ssrt/checkpoint.hpp"

#include <fstream>

#include "ssrt/io_format.hpp"
#include "ssrt/rng.hpp"

namespace ssrt {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("io-error: cannot open '" + path + "' for writing");
  write_exact(out, kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, std::uint32_t(config.image_size));
  write_u32(out, std::uint32_t(config.channels));
  write_u32(out, std::uint32_t(config.patch_size));
  write_u32(out, std::uint32_t(config.embed_dim));
  write_u32(out, std::uint32_t(config.num_blocks));
  write_u32(out, std::uint32_t(config.num_heads));
  write_u32(out, std::uint32_t(config.mlp_ratio));
  write_u32(out, std::uint32_t(config.num_classes));
  write_u32(out, std::uint32_t(config.bottleneck_dim));
  write_f64(out, config.dropout_rate);
  write_u32(out, std::uint32_t(config.perturb_layers.size()));
  for (int layer : config.perturb_layers) write_i32(out, layer);

  const auto named = params.named_tensors();
  write_u32(out, std::uint32_t(named.size()));
  for (const auto& [name, tensor] : named) {
    write_string(out, name);
    write_u32(out, std::uint32_t(tensor.shape().size()));
    for (std::size_t dim : tensor.shape()) write_u64(out, dim);
    for (double v : tensor.values()) write_f64(out, v);
  }
  out.flush();
  if (!out) throw IoError("io-error: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io-error: cannot open '" + path + "' for reading");
  char magic[sizeof(kMagic)];
  read_exact(in, magic, sizeof(kMagic));
  if (!std::equal(magic, magic + sizeof(kMagic), kMagic))
    throw FormatError("format-error: bad magic, not an SSRTCKPT file");
  const std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw FormatError("format-error: unsupported SSRTCKPT version " +
                      std::to_string(version));

  ModelConfig config;
  config.image_size = read_u32(in);
  config.channels = read_u32(in);
  config.patch_size = read_u32(in);
  config.embed_dim = read_u32(in);
  config.num_blocks = read_u32(in);
  config.num_heads = read_u32(in);
  config.mlp_ratio = read_u32(in);
  config.num_classes = read_u32(in);
  config.bottleneck_dim = read_u32(in);
  config.dropout_rate = read_f64(in);
  const std::uint32_t num_layers = read_u32(in);
  if (num_layers > 1024) throw CorruptFileError("corrupt-file: layer list out of range");
  config.perturb_layers.clear();
  for (std::uint32_t i = 0; i < num_layers; ++i)
    config.perturb_layers.push_back(read_i32(in));
  try {
    config.validate();
  } catch (const ContractError& e) {
    throw CorruptFileError(std::string("corrupt-file: invalid model config: ") + e.what());
  }

  // Allocate the parameter set structurally, then overwrite every payload.
  Rng scratch(0);
  Checkpoint ckpt{config, init_params(config, scratch)};
  auto named = ckpt.params.named_tensors();
  const std::uint32_t count = read_u32(in);
  if (count != named.size())
    throw CorruptFileError("corrupt-file: tensor count mismatch (" + std::to_string(count) +
                           " vs " + std::to_string(named.size()) + ")");
  for (auto& [name, tensor] : named) {
    const std::string stored = read_string(in);
    if (stored != name)
      throw CorruptFileError("corrupt-file: tensor name mismatch: expected '" + name +
                             "', found '" + stored + "'");
    const std::uint32_t rank = read_u32(in);
    if (rank != tensor.shape().size())
      throw CorruptFileError("corrupt-file: tensor rank mismatch for '" + name + "'");
    for (std::size_t dim : tensor.shape())
      if (read_u64(in) != dim)
        throw CorruptFileError("corrupt-file: tensor shape mismatch for '" + name + "'");
    for (double& v : tensor.values_mut()) v = read_f64(in);
  }
  expect_eof(in);
  return ckpt;
}

}  // namespace ssrt
