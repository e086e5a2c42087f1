// SPDX-License-Identifier: Apache-2.0
#include "ssrt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ssrt/io_format.hpp"

namespace ssrt {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'R', 'T', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

void check(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

double frac(double x) { return x - std::floor(x); }

std::size_t cell(double x, double f) {
  return std::size_t(std::floor(std::max(0.0, x * f)));
}

// Base pattern intensity in {0,1} at wrapped normalized coordinates. Eight
// families; classes beyond eight reuse a family at a higher frequency.
double pattern_value(std::size_t family, double freq, double u, double v) {
  switch (family) {
    case 0: return double(cell(v, 4.0 * freq) % 2);  // horizontal stripes
    case 1: return double(cell(u, 4.0 * freq) % 2);  // vertical stripes
    case 2: return double((cell(u, 2.0 * freq) + cell(v, 2.0 * freq)) % 2);
    case 3: return double((cell(u, 4.0 * freq) + cell(v, 4.0 * freq)) % 2);
    case 4: {  // ring
      const double du = u - 0.5, dv = v - 0.5;
      const double r = std::sqrt(du * du + dv * dv);
      return (r >= 0.17 && r <= 0.34) ? 1.0 : 0.0;
    }
    case 5: return (u < 0.5 && v < 0.5) ? 1.0 : 0.0;  // filled quadrant
    case 6: return double(cell(u + v, 4.0 * freq) % 2);  // diagonal stripes
    default: return (cell(u, 4.0) % 2 == 0 && cell(v, 4.0) % 2 == 0) ? 1.0 : 0.0;  // dots
  }
}

// One clean sample: pattern plus per-sample translation, amplitude, offset,
// and per-pixel noise, clamped to [0,1] and quantized to f32.
void render_clean(std::size_t label, std::size_t H, std::size_t C, Rng& rng, float* out) {
  const std::size_t family = label % 8;
  const double freq = 1.0 + double(label / 8);
  const double tx = rng.uniform(-0.05, 0.05);
  const double ty = rng.uniform(-0.05, 0.05);
  const double amp = rng.uniform(0.7, 0.95);
  const double base = rng.uniform(0.02, 0.08);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < H; ++w) {
      const double u = frac((double(w) + 0.5) / double(H) + tx);
      const double v = frac((double(h) + 0.5) / double(H) + ty);
      const double p = pattern_value(family, freq, u, v);
      for (std::size_t c = 0; c < C; ++c) {
        const double value = base + amp * p + 0.02 * rng.normal();
        out[(h * H + w) * C + c] = float(std::clamp(value, 0.0, 1.0));
      }
    }
  }
}

void apply_shift(ShiftKind kind, double s, std::size_t H, std::size_t C, Rng& shift_rng,
                 float* img) {
  switch (kind) {
    case ShiftKind::none:
      return;
    case ShiftKind::invert:
      for (std::size_t i = 0; i < H * H * C; ++i)
        img[i] = float((1.0 - s) * double(img[i]) + s * (1.0 - double(img[i])));
      return;
    case ShiftKind::rotate90: {
      std::vector<float> rotated(H * H * C);
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < H; ++w)
          for (std::size_t c = 0; c < C; ++c)
            rotated[(h * H + w) * C + c] = img[((H - 1 - w) * H + h) * C + c];
      for (std::size_t i = 0; i < H * H * C; ++i)
        img[i] = float((1.0 - s) * double(img[i]) + s * double(rotated[i]));
      return;
    }
    case ShiftKind::noise:
      for (std::size_t i = 0; i < H * H * C; ++i)
        img[i] = float(std::clamp(double(img[i]) + s * 0.5 * shift_rng.normal(), 0.0, 1.0));
      return;
    case ShiftKind::contrast:
      for (std::size_t i = 0; i < H * H * C; ++i)
        img[i] = float((1.0 - s) * double(img[i]) + s * 0.5);
      return;
  }
}

Dataset render_domain(const DatasetSpec& spec, Domain domain, Rng stream, Rng shift_stream) {
  Dataset d;
  d.image_size = spec.image_size;
  d.channels = spec.channels;
  d.num_classes = spec.num_classes;
  d.domain = domain;
  const std::size_t n = spec.samples_per_domain;
  d.labels.resize(n);
  d.pixels.resize(n * d.pixels_per_image());
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = std::uint32_t((i * spec.num_classes) / n);
    float* img = d.pixels.data() + i * d.pixels_per_image();
    render_clean(d.labels[i], spec.image_size, spec.channels, stream, img);
    if (domain == Domain::target)
      apply_shift(spec.shift_kind, spec.severity, spec.image_size, spec.channels,
                  shift_stream, img);
  }
  return d;
}

std::size_t nearest_prototype(const std::vector<double>& protos, std::size_t num_classes,
                              std::size_t dim, const float* img) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < num_classes; ++k) {
    double dist = 0.0;
    const double* p = protos.data() + k * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = double(img[j]) - p[j];
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

double classify_against(const std::vector<double>& protos, const Dataset& eval_on) {
  const std::size_t dim = eval_on.pixels_per_image();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_on.size(); ++i) {
    const float* img = eval_on.pixels.data() + i * dim;
    if (nearest_prototype(protos, eval_on.num_classes, dim, img) == eval_on.labels[i])
      ++correct;
  }
  return double(correct) / double(eval_on.size());
}

}  // namespace

std::string shift_kind_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::none: return "none";
    case ShiftKind::invert: return "invert";
    case ShiftKind::rotate90: return "rotate90";
    case ShiftKind::noise: return "noise";
    case ShiftKind::contrast: return "contrast";
  }
  throw ContractError("invalid-spec: unknown shift kind");
}

ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "none") return ShiftKind::none;
  if (name == "invert") return ShiftKind::invert;
  if (name == "rotate90") return ShiftKind::rotate90;
  if (name == "noise") return ShiftKind::noise;
  if (name == "contrast") return ShiftKind::contrast;
  throw ContractError("invalid-spec: unknown shift kind '" + name + "'");
}

void DatasetSpec::validate() const {
  check(num_classes >= 2, "invalid-spec: need at least two classes");
  check(samples_per_domain >= num_classes,
        "invalid-spec: fewer samples than classes cannot be balanced");
  check(severity >= 0.0 && severity <= 1.0, "invalid-spec: severity outside [0, 1]");
  check(image_size >= 2, "invalid-spec: image too small");
  check(channels >= 1, "invalid-spec: need at least one channel");
}

std::pair<Dataset, Dataset> generate_domain_pair(const DatasetSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  // The shift stream is drawn from only by the target (noise kind); giving the
  // source the same fork keeps clean renders identical across shift kinds.
  Dataset source =
      render_domain(spec, Domain::source, root.fork("source"), root.fork("shift"));
  Dataset target =
      render_domain(spec, Domain::target, root.fork("target"), root.fork("shift"));
  // The shift must not destroy class structure: at moderate severity the
  // target stays separable by its own per-class mean images.
  if (spec.severity <= 0.8) {
    const double self_acc = prototype_accuracy(target);
    check(self_acc >= 0.95, "target task lost prototype separability "
                            "(accuracy " + std::to_string(self_acc) + ")");
  }
  return {std::move(source), std::move(target)};
}

std::vector<double> class_prototypes(const Dataset& d) {
  check(d.size() > 0, "prototypes of an empty dataset");
  const std::size_t dim = d.pixels_per_image();
  std::vector<double> protos(d.num_classes * dim, 0.0);
  std::vector<std::size_t> counts(d.num_classes, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float* img = d.pixels.data() + i * dim;
    double* p = protos.data() + d.labels[i] * dim;
    for (std::size_t j = 0; j < dim; ++j) p[j] += double(img[j]);
    ++counts[d.labels[i]];
  }
  for (std::size_t k = 0; k < d.num_classes; ++k) {
    check(counts[k] > 0, "class with no samples");
    for (std::size_t j = 0; j < dim; ++j) protos[k * dim + j] /= double(counts[k]);
  }
  return protos;
}

double prototype_accuracy(const Dataset& d) {
  return classify_against(class_prototypes(d), d);
}

double prototype_transfer_accuracy(const Dataset& proto_from, const Dataset& eval_on) {
  check(proto_from.num_classes == eval_on.num_classes &&
            proto_from.pixels_per_image() == eval_on.pixels_per_image(),
        "prototype transfer across mismatched datasets");
  return classify_against(class_prototypes(proto_from), eval_on);
}

std::pair<Dataset, Dataset> split_train_eval(const Dataset& d) {
  Dataset train, eval;
  for (Dataset* part : {&train, &eval}) {
    part->image_size = d.image_size;
    part->channels = d.channels;
    part->num_classes = d.num_classes;
    part->domain = d.domain;
  }
  const std::size_t dim = d.pixels_per_image();
  for (std::size_t i = 0; i < d.size(); ++i) {
    Dataset& part = (i % 10 == 9) ? eval : train;
    part.labels.push_back(d.labels[i]);
    part.pixels.insert(part.pixels.end(), d.pixels.begin() + std::ptrdiff_t(i * dim),
                       d.pixels.begin() + std::ptrdiff_t((i + 1) * dim));
  }
  return {std::move(train), std::move(eval)};
}

Tensor images_tensor(const Dataset& d, const std::vector<std::size_t>& rows) {
  check(!rows.empty(), "empty image batch");
  const std::size_t dim = d.pixels_per_image();
  std::vector<double> buf(rows.size() * dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check(rows[r] < d.size(), "batch row out of range");
    const float* img = d.pixels.data() + rows[r] * dim;
    for (std::size_t j = 0; j < dim; ++j) buf[r * dim + j] = double(img[j]);
  }
  Shape shape{rows.size(), d.image_size, d.image_size, d.channels};
  return Tensor::from_data(std::move(shape), std::move(buf), false);
}

namespace {

Batch make_batch(const Dataset& d, std::vector<std::size_t> rows, bool with_labels) {
  Batch b;
  b.images = images_tensor(d, rows);
  if (with_labels)
    for (std::size_t r : rows) b.labels.push_back(d.labels[r]);
  b.indices = std::move(rows);
  return b;
}

}  // namespace

std::vector<Batch> epoch_batches(const Dataset& d, std::size_t batch_size,
                                 std::uint64_t epoch_seed, bool with_labels) {
  check(batch_size >= 1, "batch size must be positive");
  check(d.size() > 0, "batching an empty dataset");
  Rng rng(epoch_seed);
  const std::vector<std::size_t> order = rng.permutation(d.size());
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, order.size());
    out.push_back(make_batch(
        d, std::vector<std::size_t>(order.begin() + std::ptrdiff_t(start),
                                    order.begin() + std::ptrdiff_t(stop)),
        with_labels));
  }
  return out;
}

Batcher::Batcher(const Dataset& d, std::size_t batch_size, Rng stream, bool with_labels)
    : data_(&d), batch_size_(batch_size), stream_(stream), with_labels_(with_labels) {
  check(batch_size_ >= 1, "batch size must be positive");
  check(data_->size() > 0, "batching an empty dataset");
  reshuffle();
}

void Batcher::reshuffle() {
  Rng epoch_rng = stream_.fork(std::uint64_t(epoch_));
  order_ = epoch_rng.permutation(data_->size());
  cursor_ = 0;
}

Batch Batcher::next() {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t stop = std::min(cursor_ + batch_size_, order_.size());
  std::vector<std::size_t> rows(order_.begin() + std::ptrdiff_t(cursor_),
                                order_.begin() + std::ptrdiff_t(stop));
  cursor_ = stop;
  return make_batch(*data_, std::move(rows), with_labels_);
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("io-error: cannot open '" + path + "' for writing");
  write_exact(out, kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, std::uint32_t(d.size()));
  write_u32(out, std::uint32_t(d.image_size));
  write_u32(out, std::uint32_t(d.image_size));
  write_u32(out, std::uint32_t(d.channels));
  write_u32(out, std::uint32_t(d.num_classes));
  for (std::uint32_t label : d.labels) write_u32(out, label);
  for (float v : d.pixels) write_f32(out, v);
  out.flush();
  if (!out) throw IoError("io-error: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path, Domain domain) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io-error: cannot open '" + path + "' for reading");
  char magic[sizeof(kMagic)];
  read_exact(in, magic, sizeof(kMagic));
  if (!std::equal(magic, magic + sizeof(kMagic), kMagic))
    throw FormatError("format-error: bad magic, not an SSRTDATA file");
  const std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw FormatError("format-error: unsupported SSRTDATA version " +
                      std::to_string(version));
  Dataset d;
  const std::uint32_t n = read_u32(in);
  const std::uint32_t height = read_u32(in);
  const std::uint32_t width = read_u32(in);
  const std::uint32_t channels = read_u32(in);
  const std::uint32_t num_classes = read_u32(in);
  if (height != width) throw CorruptFileError("corrupt-file: non-square image dims");
  if (n == 0 || height == 0 || channels == 0 || num_classes < 2)
    throw CorruptFileError("corrupt-file: degenerate dataset dims");
  d.image_size = height;
  d.channels = channels;
  d.num_classes = num_classes;
  d.domain = domain;
  d.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    d.labels[i] = read_u32(in);
    if (d.labels[i] >= num_classes)
      throw CorruptFileError("corrupt-file: label out of range");
  }
  d.pixels.resize(std::size_t(n) * d.pixels_per_image());
  for (float& v : d.pixels) v = read_f32(in);
  expect_eof(in);
  return d;
}

}  // namespace ssrt
