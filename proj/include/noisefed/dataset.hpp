#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noisefed/rng.hpp"
#include "noisefed/tensor.hpp"

namespace noisefed {

/// Immutable image-classification dataset. Pixels are stored as float32 in
/// [0, 1], NHWC; split lists index into the rows.
struct Dataset {
  Shape sample_shape;  // (H, W, C)
  std::vector<float> pixels;
  std::vector<int> labels;
  std::size_t num_classes = 10;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_product(sample_shape); }

  /// Batch tensor (rows.size(), H, W, C) in row order.
  Tensor images(std::span<const std::size_t> rows) const;
  Tensor image(std::size_t row) const;
  std::vector<int> labels_of(std::span<const std::size_t> rows) const;

  /// Throws Error when splits overlap, labels are out of range or pixels are
  /// not finite.
  void validate() const;
};

/// Reads data_batch_1..5.bin and test_batch.bin (3073-byte records: label,
/// then 1024 R, 1024 G, 1024 B bytes). The 50k pool is split 40k/10k into
/// train/val by a seeded shuffle; the test batch becomes the test split.
Dataset load_cifar10(const std::filesystem::path& directory,
                     std::uint64_t split_seed = 0);

/// Random subset of `n` rows keeping the 4:1:1 train/val/test proportion,
/// each part drawn from the matching split.
Dataset subset(const Dataset& data, std::size_t n, std::uint64_t seed);

struct SynthOptions {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t hw = 8;
  std::size_t channels = 3;
  /// Weight of the class prototype against pixel noise is s / (1 + s).
  double separation = 1.0;
  std::uint64_t seed = 0;
};

/// Class-conditional Gaussian-blob images: each class owns a blob prototype
/// (random center, width and per-channel contrast) mixed with Gaussian pixel
/// noise and clamped to [0, 1]. Splits are balanced per class, 4:1:1.
Dataset synth_dataset(const SynthOptions& options);

/// The prototype image of `label` under `options`.
Tensor synth_prototype(const SynthOptions& options, int label);

enum class PgmScale {
  kMinMax,     // map [min, max] onto [0, 255]; a constant map is all zeros
  kUnitRange,  // map [0, 1] onto [0, 255], clamping outside values
};

/// Writes a 2-D tensor (H, W) as binary PGM (P5, maxval 255).
void export_pgm(const Tensor& map, const std::filesystem::path& path,
                PgmScale scale = PgmScale::kMinMax);

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const std::filesystem::path& path);

/// For each sigma writes clamp(image + N(0, sigma^2), 0, 1) as one PGM with
/// the channels tiled left to right: `<prefix>_sigma<s>.pgm`. Returns the
/// written paths.
std::vector<std::filesystem::path> export_perturbation_grid(
    const Tensor& image, std::span<const double> sigmas, RngStream& rng,
    const std::string& path_prefix);

}  // namespace noisefed
