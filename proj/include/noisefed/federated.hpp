#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noisefed/dataset.hpp"
#include "noisefed/model.hpp"
#include "noisefed/train.hpp"

namespace noisefed {

struct FederatedConfig {
  std::size_t num_clients = 3;
  std::size_t rounds = 20;
  std::size_t local_epochs = 4;
  /// One sigma for every client, or one per client.
  std::vector<double> per_client_sigma = {0.0};
  TrainConfig train;
  /// Global model init and partition seed.
  std::uint64_t seed = 0;
  /// Noise seed for client hidden layers (and uploads).
  std::uint64_t noise_seed = 0;
  /// Optional N(0, s^2) added to uploaded parameters; 0 disables.
  double upload_sigma = 0.0;
  /// 0: NOISEFED_THREADS / hardware default.
  std::size_t workers = 0;

  void validate() const;
  double sigma_for(std::size_t client) const;
};

/// Parameters followed by batch-norm moving statistics, in layer order.
struct WeightSet {
  std::vector<Tensor> tensors;
  std::size_t sample_count = 0;

  friend bool operator==(const WeightSet&, const WeightSet&) = default;
};

WeightSet extract_weights(const Model& model, std::size_t sample_count = 0);
void load_weights(Model& model, const WeightSet& weights);

/// Little-endian binary: "NFW1", tensor count, then per tensor its rank,
/// dims and float64 values.
void write_weight_file(const WeightSet& weights, const std::filesystem::path& path);
WeightSet read_weight_file(const std::filesystem::path& path);

/// Seeded horizontal split of `rows` into k disjoint shards whose sizes
/// differ by at most one. Each shard keeps the relative order of `rows`.
std::vector<std::vector<std::size_t>> partition(std::span<const std::size_t> rows,
                                                std::size_t k, std::uint64_t seed);

/// Training seed of client `client` under the federation's training seed.
std::uint64_t client_seed(std::uint64_t train_seed, std::size_t client);
std::uint64_t client_noise_seed(std::uint64_t noise_seed, std::size_t client);

struct LocalResult {
  WeightSet weights;
  EvalResult local;  // eval-mode accuracy/loss on the client's shard
};

/// Fresh client model (zeroed momentum) loaded with `global`, trained for
/// config.epochs epochs with Gaussian hidden-layer noise at `sigma`.
LocalResult local_train(const ModelSpec& spec, const WeightSet& global,
                        const Dataset& data, std::span<const std::size_t> shard,
                        const TrainConfig& config, double sigma,
                        std::uint64_t noise_seed);

/// Sample-count weighted mean of congruent weight sets. Computed as
/// w_0 + sum_i (n_i / N) (w_i - w_0), which is exact for identical updates.
WeightSet fedavg(std::span<const WeightSet> updates);

struct ClientMetrics {
  double local_acc = 0.0;
  double local_loss = 0.0;

  friend bool operator==(const ClientMetrics&, const ClientMetrics&) = default;
};

struct RoundRecord {
  std::size_t round_index = 0;
  double global_accuracy = 0.0;
  double global_loss = 0.0;
  std::vector<ClientMetrics> per_client;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

/// Broadcast, local training on every client, FedAvg, then evaluation of the
/// global model on the test split, for config.rounds rounds. Clients of a
/// round may run concurrently; aggregation waits for all of them. The final
/// global model is written to `global_out` when given.
std::vector<RoundRecord> run_rounds(const FederatedConfig& config,
                                    const Dataset& data, const ModelSpec& spec,
                                    Model* global_out = nullptr);

/// round,global_acc,global_loss,client_1_acc,client_1_loss,...
std::string rounds_to_csv(std::span<const RoundRecord> records);

}  // namespace noisefed
