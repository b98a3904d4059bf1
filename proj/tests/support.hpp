#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "noisefed/model.hpp"
#include "noisefed/model_spec.hpp"
#include "noisefed/rng.hpp"

namespace noisefed::testkit {

/// Small random network: 1-2 conv blocks (optional BN, noise, pool), an
/// optional hidden dense layer with dropout, and a 3-way dense head.
ModelSpec random_small_spec(RngStream& rng);

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Backprop gradients of every trainable parameter against central finite
/// differences of the train-mode loss (fixed dropout/noise streams).
/// Relative error per element: |a - n| / max(|a| + |n|, 1e-6).
GradCheck gradient_check(const ModelSpec& spec, std::uint64_t seed,
                         std::size_t batch = 4, double h = 1e-5);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

std::string read_file(const std::filesystem::path& path);

/// Rows of a simple comma-separated file, header included.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

}  // namespace noisefed::testkit
