// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic two-domain image classification tasks. A pool of
// procedural pattern classes is rendered with per-sample jitter; the target
// domain additionally passes through a parametric distribution shift with a
// controllable severity. Includes batching and the SSRTDATA binary format.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssrt/rng.hpp"
#include "ssrt/tensor.hpp"

namespace ssrt {

enum class ShiftKind { none, invert, rotate90, noise, contrast };

std::string shift_kind_name(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& name);

enum class Domain { source, target };

struct DatasetSpec {
  std::size_t num_classes = 8;
  std::size_t samples_per_domain = 2000;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  ShiftKind shift_kind = ShiftKind::invert;
  double severity = 0.6;
  std::uint64_t seed = 0;

  void validate() const;  // K >= 2, n >= K, severity in [0,1]

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Pixels are f32 in [0,1], row-major [sample][row][col][channel]; labels are
// class indices grouped in contiguous, balanced blocks (class sizes within
// +-1). The domain tag is in-memory metadata only: the file format does not
// carry it, so equality covers the data fields alone.
struct Dataset {
  std::size_t image_size = 0;
  std::size_t channels = 0;
  std::size_t num_classes = 0;
  Domain domain = Domain::source;
  std::vector<std::uint32_t> labels;
  std::vector<float> pixels;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const { return image_size * image_size * channels; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.image_size == b.image_size && a.channels == b.channels &&
           a.num_classes == b.num_classes && a.labels == b.labels && a.pixels == b.pixels;
  }
};

/// Renders the clean source domain and the shifted target domain from one
/// spec. Pure in the spec. Shift formulas, applied to each clean pixel p at
/// severity s (jitter and pixel noise are applied before the shift):
///   none:     p
///   invert:   (1-s)*p + s*(1-p)
///   rotate90: (1-s)*p + s*rot(p), rot(h,w) = clean(W-1-w, h) (clockwise)
///   noise:    clamp(p + s*0.5*N(0,1))
///   contrast: (1-s)*p + s*0.5
/// At severity <= 0.8 the generated target must stay nearest-prototype
/// separable (accuracy >= 0.95); this is verified at generation time and a
/// violation is a contract error.
std::pair<Dataset, Dataset> generate_domain_pair(const DatasetSpec& spec);

/// Per-class mean images, flattened [num_classes * pixels_per_image].
std::vector<double> class_prototypes(const Dataset& d);

/// Accuracy of nearest-prototype classification using d's own prototypes.
double prototype_accuracy(const Dataset& d);

/// Accuracy on eval_on using prototypes computed from proto_from.
double prototype_transfer_accuracy(const Dataset& proto_from, const Dataset& eval_on);

/// (train, eval) split: rows with index % 10 == 9 form the held-out eval set.
std::pair<Dataset, Dataset> split_train_eval(const Dataset& d);

/// Rows gathered into a [B, H, W, C] tensor (f32 payload widened to f64).
Tensor images_tensor(const Dataset& d, const std::vector<std::size_t>& rows);

struct Batch {
  Tensor images;                     // [B, H, W, C]
  std::vector<std::size_t> labels;   // empty when labels are withheld
  std::vector<std::size_t> indices;  // rows into the dataset
};

/// One epoch of batches under a seed-deterministic shuffle. All batches have
/// batch_size rows except possibly the last. Target datasets are batched with
/// with_labels=false so training never sees their labels.
std::vector<Batch> epoch_batches(const Dataset& d, std::size_t batch_size,
                                 std::uint64_t epoch_seed, bool with_labels);

/// Step-oriented iterator: re-shuffles on exhaustion, one fork per epoch, so
/// source and target streams advance independently of each other.
class Batcher {
 public:
  Batcher(const Dataset& d, std::size_t batch_size, Rng stream, bool with_labels);

  Batch next();
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Dataset* data_;
  std::size_t batch_size_;
  Rng stream_;
  bool with_labels_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// SSRTDATA format: magic "SSRTDATA", version u32, n/H/W/C/K u32,
/// labels u32[n], pixels f32[n*H*W*C]; little-endian throughout.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path, Domain domain = Domain::source);

}  // namespace ssrt
