#include "noisefed/federated.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "noisefed/rng.hpp"
#include "noisefed/workers.hpp"

namespace noisefed {

namespace {

constexpr std::uint64_t kPartitionSite = 4'000'001;
constexpr std::uint64_t kClientSite = 4'000'002;
constexpr std::uint64_t kClientNoiseSite = 4'000'003;

}  // namespace

void FederatedConfig::validate() const {
  if (num_clients == 0) throw ConfigError("federated.num_clients: must be >= 1");
  if (rounds == 0) throw ConfigError("federated.rounds: must be >= 1");
  if (per_client_sigma.empty()) {
    throw ConfigError("federated.per_client_sigma: must not be empty");
  }
  if (per_client_sigma.size() != 1 && per_client_sigma.size() != num_clients) {
    throw ConfigError(fmt::format(
        "federated.per_client_sigma: expected 1 or {} values, got {}",
        num_clients, per_client_sigma.size()));
  }
  for (double s : per_client_sigma) {
    if (!(s >= 0.0)) throw ConfigError("federated.per_client_sigma: sigma must be >= 0");
  }
  if (!(upload_sigma >= 0.0)) throw ConfigError("federated.upload_sigma: must be >= 0");
  train.validate();
}

double FederatedConfig::sigma_for(std::size_t client) const {
  return per_client_sigma.size() == 1 ? per_client_sigma.front()
                                      : per_client_sigma.at(client);
}

WeightSet extract_weights(const Model& model, std::size_t sample_count) {
  WeightSet out;
  out.sample_count = sample_count;
  for (const Tensor* p : model.parameters()) out.tensors.push_back(*p);
  for (const Tensor* b : model.buffers()) out.tensors.push_back(*b);
  return out;
}

void load_weights(Model& model, const WeightSet& weights) {
  auto params = model.parameters();
  auto bufs = model.buffers();
  if (weights.tensors.size() != params.size() + bufs.size()) {
    throw Error(fmt::format("load_weights: expected {} tensors, got {}",
                            params.size() + bufs.size(), weights.tensors.size()));
  }
  std::size_t k = 0;
  for (auto* group : {&params, &bufs}) {
    for (Tensor* t : *group) {
      if (t->shape() != weights.tensors[k].shape()) {
        throw Error(fmt::format("load_weights: tensor {} has shape {}, model expects {}",
                                k, shape_to_string(weights.tensors[k].shape()),
                                shape_to_string(t->shape())));
      }
      *t = weights.tensors[k++];
    }
  }
}

namespace {

constexpr char kWeightMagic[4] = {'N', 'F', 'W', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw Error("truncated weight file '" + path.string() + "'");
  }
  return v;
}

}  // namespace

void write_weight_file(const WeightSet& weights, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(kWeightMagic, sizeof kWeightMagic);
  put_u64(out, weights.sample_count);
  put_u64(out, weights.tensors.size());
  for (const Tensor& t : weights.tensors) {
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

WeightSet read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weight file '" + path.string() + "'");
  char magic[4] = {};
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw Error("'" + path.string() + "' is not a weight file");
  }
  WeightSet weights;
  weights.sample_count = get_u64(in, path);
  const std::uint64_t count = get_u64(in, path);
  for (std::uint64_t k = 0; k < count; ++k) {
    Shape shape(get_u64(in, path));
    for (auto& d : shape) d = get_u64(in, path);
    std::vector<double> values(shape_product(shape));
    if (!in.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw Error("truncated weight file '" + path.string() + "'");
    }
    weights.tensors.emplace_back(std::move(shape), std::move(values));
  }
  return weights;
}

std::vector<std::vector<std::size_t>> partition(std::span<const std::size_t> rows,
                                                std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("partition: k must be >= 1");
  if (k > rows.size()) {
    throw Error(fmt::format("partition: {} shards requested for {} rows", k, rows.size()));
  }
  // Shuffled positions are dealt round-robin; each shard is then sorted by
  // position so it keeps the input order.
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream::child(seed, kPartitionSite);
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<std::vector<std::size_t>> positions(k);
  for (std::size_t i = 0; i < order.size(); ++i) positions[i % k].push_back(order[i]);

  std::vector<std::vector<std::size_t>> shards(k);
  for (std::size_t s = 0; s < k; ++s) {
    std::sort(positions[s].begin(), positions[s].end());
    shards[s].reserve(positions[s].size());
    for (std::size_t p : positions[s]) shards[s].push_back(rows[p]);
  }
  return shards;
}

std::uint64_t client_seed(std::uint64_t train_seed, std::size_t client) {
  return derive_seed(train_seed, kClientSite, client);
}

std::uint64_t client_noise_seed(std::uint64_t noise_seed, std::size_t client) {
  return derive_seed(noise_seed, kClientNoiseSite, client);
}

LocalResult local_train(const ModelSpec& spec, const WeightSet& global,
                        const Dataset& data, std::span<const std::size_t> shard,
                        const TrainConfig& config, double sigma,
                        std::uint64_t noise_seed) {
  if (shard.empty()) throw Error("local_train: empty shard");
  Model model = Model::build(spec, 0);
  load_weights(model, global);
  model.reset_optimizer_state();

  NoisePlan plan;
  plan.mechanism = Mechanism::kHiddenLayers;
  plan.sigma = sigma;
  plan.base_seed = noise_seed;
  fit(model, data, shard, config, plan);

  LocalResult out;
  out.weights = extract_weights(model, shard.size());
  out.local = evaluate(model, data, shard);
  return out;
}

WeightSet fedavg(std::span<const WeightSet> updates) {
  if (updates.empty()) throw Error("fedavg: no updates");
  const WeightSet& first = updates.front();
  std::size_t total = 0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const WeightSet& u = updates[i];
    if (u.tensors.size() != first.tensors.size()) {
      throw Error(fmt::format("fedavg: update {} has {} tensors, expected {}", i,
                              u.tensors.size(), first.tensors.size()));
    }
    for (std::size_t t = 0; t < u.tensors.size(); ++t) {
      if (u.tensors[t].shape() != first.tensors[t].shape()) {
        throw Error(fmt::format("fedavg: update {} tensor {} has shape {}, expected {}",
                                i, t, shape_to_string(u.tensors[t].shape()),
                                shape_to_string(first.tensors[t].shape())));
      }
    }
    total += u.sample_count;
  }
  if (total == 0) throw Error("fedavg: total sample count is zero");

  WeightSet out = first;
  out.sample_count = total;
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const double w = static_cast<double>(updates[i].sample_count) / static_cast<double>(total);
    if (w == 0.0) continue;
    for (std::size_t t = 0; t < out.tensors.size(); ++t) {
      auto dst = out.tensors[t].values();
      auto src = updates[i].tensors[t].values();
      auto base = first.tensors[t].values();
      for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += w * (src[e] - base[e]);
    }
  }
  return out;
}

std::vector<RoundRecord> run_rounds(const FederatedConfig& config,
                                    const Dataset& data, const ModelSpec& spec,
                                    Model* global_out) {
  if (config.rounds == 0) {
    if (global_out != nullptr) *global_out = Model::build(spec, config.seed);
    return {};
  }
  config.validate();
  if (data.test.empty()) throw Error("run_rounds: empty test split");
  const auto shards = partition(data.train, config.num_clients, config.seed);

  Model global = Model::build(spec, config.seed);
  WeightSet weights = extract_weights(global);
  const std::size_t workers = worker_count(config.workers);

  std::vector<RoundRecord> records;
  records.reserve(config.rounds);
  for (std::size_t r = 0; r < config.rounds; ++r) {
    std::vector<LocalResult> results(config.num_clients);
    run_tasks(config.num_clients, workers, [&](std::size_t i) {
      TrainConfig local = config.train;
      local.epochs = config.local_epochs;
      local.seed = client_seed(config.train.seed, i);
      local.epoch_offset = config.train.epoch_offset + r * config.local_epochs;
      const std::uint64_t nseed = client_noise_seed(config.noise_seed, i);
      results[i] = local_train(spec, weights, data, shards[i], local,
                               config.sigma_for(i), nseed);
      if (config.upload_sigma > 0.0) {
        RngStream rng = RngStream::child(nseed, site::kUpload, r);
        const std::size_t n_params = global.parameters().size();
        for (std::size_t t = 0; t < n_params; ++t) {
          for (double& v : results[i].weights.tensors[t].values()) {
            v += rng.normal(config.upload_sigma);
          }
        }
      }
    });

    std::vector<WeightSet> updates;
    RoundRecord record;
    record.round_index = r;
    for (auto& res : results) {
      record.per_client.push_back({res.local.accuracy, res.local.loss});
      updates.push_back(std::move(res.weights));
    }
    weights = fedavg(updates);
    load_weights(global, weights);
    const EvalResult eval = evaluate(global, data, data.test);
    record.global_accuracy = eval.accuracy;
    record.global_loss = eval.loss;
    records.push_back(std::move(record));
  }
  if (global_out != nullptr) *global_out = std::move(global);
  return records;
}

std::string rounds_to_csv(std::span<const RoundRecord> records) {
  std::ostringstream out;
  out << "round,global_acc,global_loss";
  const std::size_t clients = records.empty() ? 0 : records.front().per_client.size();
  for (std::size_t i = 1; i <= clients; ++i) {
    out << fmt::format(",client_{}_acc,client_{}_loss", i, i);
  }
  out << '\n';
  for (const auto& r : records) {
    out << fmt::format("{},{:.6f},{:.6f}", r.round_index + 1, r.global_accuracy,
                       r.global_loss);
    for (const auto& c : r.per_client) {
      out << fmt::format(",{:.6f},{:.6f}", c.local_acc, c.local_loss);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace noisefed
