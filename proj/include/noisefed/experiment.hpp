#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "noisefed/dataset.hpp"
#include "noisefed/model_spec.hpp"
#include "noisefed/noise.hpp"
#include "noisefed/train.hpp"

namespace noisefed {

enum class ExperimentKind {
  kSweepCentralized,
  kMultiVsSingleLayer,
  kFederatedSweep,
  kMechanismComparison,
};

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct DatasetConfig {
  std::string kind = "synth";  // synth | cifar10
  std::filesystem::path path;  // cifar10 directory
  std::size_t subset = 0;      // cifar10: 0 keeps everything
  SynthOptions synth;
  std::uint64_t seed = 0;      // split / subset seed
};

struct FederatedSection {
  std::size_t clients = 3;
  std::size_t rounds = 20;
  std::size_t local_epochs = 4;
  std::vector<double> sigmas = {0.1, 0.3, 0.5, 0.7, 0.9};
  /// Explicit per-client sigmas, run after the uniform grid.
  std::vector<double> per_client;
  /// Pick per-client sigmas by SNR on local sweeps over noise.sigmas.
  bool per_client_auto = false;
  double upload_sigma = 0.0;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kSweepCentralized;
  ModelSpec model;
  DatasetConfig dataset;
  Mechanism mechanism = Mechanism::kHiddenLayers;
  /// Sweep grid; always contains 0.
  std::vector<double> sigmas;
  /// Fixed sigma of the layer comparison and mechanism comparison.
  double sigma = 0.1;
  std::vector<Mechanism> mechanisms;
  /// Mechanism comparison: also sweep the top three mechanisms.
  bool mechanism_grid = false;
  std::vector<double> grid_sigmas = {0.1, 0.3, 0.5, 0.7, 0.9};
  TrainConfig training;
  std::optional<FederatedSection> federated;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs/out";
  std::size_t workers = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// 0 followed by 20 evenly spaced levels in (0, 1].
std::vector<double> default_sigma_grid();

ExperimentConfig parse_experiment_config(const std::string& yaml_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved config (inline model spec); parses back to an equal config.
std::string serialize_experiment_config(const ExperimentConfig& config);

/// Seeds of repeat r: one training seed shared by every cell of the repeat,
/// and one noise seed per cell.
std::uint64_t repeat_train_seed(std::uint64_t master, std::size_t repeat);
std::uint64_t cell_noise_seed(std::uint64_t master, std::size_t repeat,
                              std::size_t cell);

Dataset load_dataset(const DatasetConfig& config);

/// Runs the experiment into config.output. Returns the CSV files written,
/// relative to the output directory.
std::vector<std::filesystem::path> run_experiment(const ExperimentConfig& config);

/// Re-runs the experiment recorded in `manifest`, writing into `output`.
std::vector<std::filesystem::path> rerun_from_manifest(
    const std::filesystem::path& manifest, const std::filesystem::path& output);

/// Feature maps of the first two conv layers of every saved model, plus the
/// perturbation grid of the first test image, into <run_dir>/figs.
std::vector<std::filesystem::path> export_figures(const std::filesystem::path& run_dir);

}  // namespace noisefed
