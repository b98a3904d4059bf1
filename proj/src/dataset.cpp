#include "noisefed/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace noisefed {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPlane;

void shuffle_rows(std::vector<std::size_t>& rows, std::uint64_t seed) {
  RngStream rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng.engine());
}

void read_cifar_file(const fs::path& path, Dataset& data) {
  if (!fs::exists(path)) {
    throw Error("CIFAR-10: missing file " + path.string());
  }
  const auto bytes = fs::file_size(path);
  if (bytes == 0 || bytes % kCifarRecord != 0) {
    throw Error(fmt::format(
        "CIFAR-10: {}: size {} is not a multiple of the {}-byte record length",
        path.string(), bytes, kCifarRecord));
  }
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> buf(bytes);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(bytes))) {
    throw Error("CIFAR-10: cannot read " + path.string());
  }
  const std::size_t records = bytes / kCifarRecord;
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = buf.data() + r * kCifarRecord;
    if (rec[0] >= 10) {
      throw Error(fmt::format("CIFAR-10: {}: record {} has label {}",
                              path.string(), r, rec[0]));
    }
    data.labels.push_back(rec[0]);
    // Channel-planar on disk, interleaved (HWC) in memory.
    for (std::size_t p = 0; p < kCifarPlane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        data.pixels.push_back(static_cast<float>(rec[1 + c * kCifarPlane + p]) /
                              255.0f);
      }
    }
  }
}

}  // namespace

Tensor Dataset::images(std::span<const std::size_t> rows) const {
  const std::size_t stride = sample_size();
  Shape shape = sample_shape;
  shape.insert(shape.begin(), rows.size());
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* src = pixels.data() + rows[i] * stride;
    std::copy(src, src + stride, out.data() + i * stride);
  }
  return out;
}

Tensor Dataset::image(std::size_t row) const {
  const std::size_t rows[] = {row};
  return images(rows).reshaped(sample_shape);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> rows) const {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels.at(r));
  return out;
}

void Dataset::validate() const {
  if (pixels.size() != labels.size() * sample_size()) {
    throw Error("dataset: pixel buffer does not match row count");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw Error("dataset: label " + std::to_string(l) + " out of range");
    }
  }
  std::set<std::size_t> seen;
  for (const auto* split : {&train, &val, &test}) {
    for (std::size_t r : *split) {
      if (r >= size()) throw Error("dataset: split row out of range");
      if (!seen.insert(r).second) throw Error("dataset: splits overlap");
    }
  }
  if (!std::all_of(pixels.begin(), pixels.end(),
                   [](float v) { return std::isfinite(v); })) {
    throw Error("dataset: non-finite pixel");
  }
}

Dataset load_cifar10(const fs::path& directory, std::uint64_t split_seed) {
  Dataset data;
  data.sample_shape = {kCifarSide, kCifarSide, 3};
  data.num_classes = 10;
  std::vector<fs::path> files;
  for (int i = 1; i <= 5; ++i) {
    files.push_back(directory / fmt::format("data_batch_{}.bin", i));
  }
  files.push_back(directory / "test_batch.bin");
  for (const auto& f : files) {
    if (!fs::exists(f)) throw Error("CIFAR-10: missing file " + f.string());
  }
  for (std::size_t i = 0; i < 5; ++i) read_cifar_file(files[i], data);
  const std::size_t pool = data.size();
  read_cifar_file(files[5], data);

  std::vector<std::size_t> rows(pool);
  std::iota(rows.begin(), rows.end(), 0);
  shuffle_rows(rows, split_seed);
  const std::size_t val_size = pool / 5;
  data.train.assign(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(val_size));
  data.val.assign(rows.end() - static_cast<std::ptrdiff_t>(val_size), rows.end());
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.val.begin(), data.val.end());
  for (std::size_t r = pool; r < data.size(); ++r) data.test.push_back(r);
  return data;
}

Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
  const std::size_t n_val = n / 6, n_test = n / 6;
  const std::size_t n_train = n - n_val - n_test;
  if (n_train > data.train.size() || n_val > data.val.size() ||
      n_test > data.test.size()) {
    throw Error(fmt::format("subset of {} rows exceeds the available splits", n));
  }
  Dataset out;
  out.sample_shape = data.sample_shape;
  out.num_classes = data.num_classes;
  const std::size_t stride = data.sample_size();
  std::uint64_t part = 0;
  for (auto [src, dst, count] :
       {std::tuple{&data.train, &out.train, n_train},
        std::tuple{&data.val, &out.val, n_val},
        std::tuple{&data.test, &out.test, n_test}}) {
    std::vector<std::size_t> rows = *src;
    shuffle_rows(rows, derive_seed(seed, part++));
    rows.resize(count);
    std::sort(rows.begin(), rows.end());
    for (std::size_t r : rows) {
      dst->push_back(out.size());
      out.labels.push_back(data.labels[r]);
      out.pixels.insert(out.pixels.end(), data.pixels.begin() + r * stride,
                        data.pixels.begin() + (r + 1) * stride);
    }
  }
  return out;
}

Tensor synth_prototype(const SynthOptions& options, int label) {
  RngStream rng = RngStream::child(options.seed, 0x5e7a, static_cast<std::uint64_t>(label));
  const double hw = static_cast<double>(options.hw);
  const double cy = (0.2 + 0.6 * rng.uniform()) * hw;
  const double cx = (0.2 + 0.6 * rng.uniform()) * hw;
  const double width = (0.15 + 0.2 * rng.uniform()) * hw;
  std::vector<double> contrast(options.channels);
  for (double& c : contrast) c = 2.0 * rng.uniform() - 1.0;
  Tensor proto({options.hw, options.hw, options.channels});
  for (std::size_t y = 0; y < options.hw; ++y) {
    for (std::size_t x = 0; x < options.hw; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
      for (std::size_t c = 0; c < options.channels; ++c) {
        proto[(y * options.hw + x) * options.channels + c] =
            0.5 + 0.5 * contrast[c] * blob;
      }
    }
  }
  return proto;
}

Dataset synth_dataset(const SynthOptions& options) {
  if (options.classes < 2) throw Error("synth_dataset: need at least 2 classes");
  if (options.per_class < 6) throw Error("synth_dataset: need per_class >= 6");
  if (options.hw < 1 || options.channels < 1) {
    throw Error("synth_dataset: image size must be positive");
  }
  if (!(options.separation >= 0.0)) {
    throw Error("synth_dataset: separation must be >= 0");
  }
  Dataset data;
  data.sample_shape = {options.hw, options.hw, options.channels};
  data.num_classes = options.classes;
  const double weight = std::isinf(options.separation)
                            ? 1.0
                            : options.separation / (1.0 + options.separation);
  std::vector<Tensor> protos;
  for (std::size_t c = 0; c < options.classes; ++c) {
    protos.push_back(synth_prototype(options, static_cast<int>(c)));
  }
  RngStream noise = RngStream::child(options.seed, 0x401e);
  // Rows interleave classes: row = i * classes + c.
  for (std::size_t i = 0; i < options.per_class; ++i) {
    for (std::size_t c = 0; c < options.classes; ++c) {
      data.labels.push_back(static_cast<int>(c));
      for (double p : protos[c].values()) {
        const double v = weight * p + (1.0 - weight) * (0.5 + 0.25 * noise.normal());
        data.pixels.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
    }
  }
  const std::size_t n_train = options.per_class * 4 / 6;
  const std::size_t n_val = options.per_class / 6;
  for (std::size_t c = 0; c < options.classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < options.per_class; ++i) {
      rows.push_back(i * options.classes + c);
    }
    shuffle_rows(rows, derive_seed(options.seed, 0x5b17, c));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto& split = k < n_train ? data.train
                    : k < n_train + n_val ? data.val
                                          : data.test;
      split.push_back(rows[k]);
    }
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.val.begin(), data.val.end());
  std::sort(data.test.begin(), data.test.end());
  return data;
}

void export_pgm(const Tensor& map, const fs::path& path, PgmScale scale) {
  if (map.rank() != 2) {
    throw Error("export_pgm expects a 2-D map, got " + shape_to_string(map.shape()));
  }
  if (!map.all_finite()) throw Error("export_pgm: map has non-finite values");
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::vector<unsigned char> bytes(map.size(), 0);
  if (scale == PgmScale::kMinMax) {
    const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      for (std::size_t i = 0; i < map.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(255.0 * (map[i] - *lo) / range));
      }
    }
  } else {
    for (std::size_t i = 0; i < map.size(); ++i) {
      bytes[i] = static_cast<unsigned char>(
          std::lround(255.0 * std::clamp(map[i], 0.0, 1.0)));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

PgmImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string magic;
  PgmImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255) {
    throw Error(path.string() + ": not an 8-bit binary PGM");
  }
  in.get();
  img.pixels.resize(img.width * img.height);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw Error(path.string() + ": truncated pixel data");
  }
  return img;
}

std::vector<fs::path> export_perturbation_grid(const Tensor& image,
                                               std::span<const double> sigmas,
                                               RngStream& rng,
                                               const std::string& path_prefix) {
  if (image.rank() != 3) throw Error("perturbation grid expects an (H, W, C) image");
  const std::size_t h = image.dim(0), w = image.dim(1), c_n = image.dim(2);
  std::vector<fs::path> written;
  for (double sigma : sigmas) {
    if (!(sigma >= 0.0)) throw Error("perturbation sigma must be >= 0");
    Tensor tiled({h, w * c_n});
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < c_n; ++c) {
          double v = image[(y * w + x) * c_n + c];
          if (sigma > 0.0) v = std::clamp(v + rng.normal(sigma), 0.0, 1.0);
          tiled[y * w * c_n + c * w + x] = v;
        }
      }
    }
    fs::path path = fmt::format("{}_sigma{:.2f}.pgm", path_prefix, sigma);
    export_pgm(tiled, path, PgmScale::kUnitRange);
    written.push_back(std::move(path));
  }
  return written;
}

}  // namespace noisefed
