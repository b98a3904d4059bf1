#include "noisefed/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "noisefed/federated.hpp"
#include "noisefed/metrics.hpp"
#include "noisefed/rng.hpp"
#include "noisefed/workers.hpp"

#ifndef NOISEFED_VERSION
#define NOISEFED_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace noisefed {

namespace {

constexpr std::uint64_t kTrainSite = 5'000'001;
constexpr std::uint64_t kNoiseSite = 5'000'002;
constexpr std::uint64_t kFigureSite = 5'000'003;
constexpr std::uint64_t kLocalSweepSite = 5'000'004;

const std::vector<double> kFigureSigmas = {0.0, 0.1, 0.3, 0.5, 0.7, 0.9};

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + ": " + what);
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    config_error(path, "invalid value '" + YAML::Dump(node) + "'");
  }
}

std::vector<double> sigma_list(const YAML::Node& node, const std::string& path) {
  if (!node.IsSequence()) config_error(path, "expected a list of sigmas");
  std::vector<double> out;
  for (std::size_t i = 0; i < node.size(); ++i) {
    out.push_back(scalar<double>(node[i], fmt::format("{}[{}]", path, i)));
  }
  return out;
}

void check_sigmas(const std::vector<double>& sigmas, const std::string& path) {
  std::set<long long> seen;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double s = sigmas[i];
    if (!std::isfinite(s) || s < 0.0) {
      config_error(fmt::format("{}[{}]", path, i), "sigma must be finite and >= 0");
    }
    if (!seen.insert(std::llround(s * 100.0)).second) {
      config_error(fmt::format("{}[{}]", path, i),
                   fmt::format("duplicate sigma {:.2f} at 2-decimal resolution", s));
    }
  }
}

template <typename Fn>
void for_each_key(const YAML::Node& node, const std::string& path, Fn&& fn) {
  if (!node.IsMap()) config_error(path, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const std::string field = path.empty() ? key : path + "." + key;
    if (!fn(key, kv.second, field)) config_error(field, "unknown field");
  }
}

void parse_dataset(const YAML::Node& node, DatasetConfig& d) {
  for_each_key(node, "dataset", [&](const std::string& key, const YAML::Node& v,
                                    const std::string& field) {
    if (key == "kind") {
      d.kind = scalar<std::string>(v, field);
      if (d.kind != "synth" && d.kind != "cifar10") {
        config_error(field, "expected synth or cifar10, got '" + d.kind + "'");
      }
    } else if (key == "path") {
      d.path = scalar<std::string>(v, field);
    } else if (key == "subset") {
      d.subset = scalar<std::size_t>(v, field);
    } else if (key == "classes") {
      d.synth.classes = scalar<std::size_t>(v, field);
    } else if (key == "per_class") {
      d.synth.per_class = scalar<std::size_t>(v, field);
    } else if (key == "hw") {
      d.synth.hw = scalar<std::size_t>(v, field);
    } else if (key == "channels") {
      d.synth.channels = scalar<std::size_t>(v, field);
    } else if (key == "separation") {
      d.synth.separation = scalar<double>(v, field);
    } else if (key == "seed") {
      d.seed = scalar<std::uint64_t>(v, field);
    } else {
      return false;
    }
    return true;
  });
  d.synth.seed = d.seed;
}

Mechanism mechanism_field(const YAML::Node& v, const std::string& field) {
  try {
    return parse_mechanism(scalar<std::string>(v, field));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    config_error(field, e.what());
  }
}

void parse_noise(const YAML::Node& node, ExperimentConfig& c) {
  for_each_key(node, "noise", [&](const std::string& key, const YAML::Node& v,
                                  const std::string& field) {
    if (key == "mechanism") {
      c.mechanism = mechanism_field(v, field);
    } else if (key == "sigmas") {
      c.sigmas = sigma_list(v, field);
    } else if (key == "sigma") {
      c.sigma = scalar<double>(v, field);
    } else if (key == "mechanisms") {
      if (!v.IsSequence()) config_error(field, "expected a list");
      c.mechanisms.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        c.mechanisms.push_back(mechanism_field(v[i], fmt::format("{}[{}]", field, i)));
      }
    } else if (key == "grid") {
      c.mechanism_grid = scalar<bool>(v, field);
    } else if (key == "grid_sigmas") {
      c.grid_sigmas = sigma_list(v, field);
    } else {
      return false;
    }
    return true;
  });
}

void parse_training(const YAML::Node& node, TrainConfig& t) {
  for_each_key(node, "training", [&](const std::string& key, const YAML::Node& v,
                                     const std::string& field) {
    if (key == "batch_size") {
      t.batch_size = scalar<std::size_t>(v, field);
    } else if (key == "learning_rate") {
      t.learning_rate = scalar<double>(v, field);
    } else if (key == "momentum") {
      t.momentum = scalar<double>(v, field);
    } else if (key == "epochs") {
      t.epochs = scalar<std::size_t>(v, field);
    } else {
      return false;
    }
    return true;
  });
}

void parse_federated(const YAML::Node& node, FederatedSection& f) {
  for_each_key(node, "federated", [&](const std::string& key, const YAML::Node& v,
                                      const std::string& field) {
    if (key == "clients") {
      f.clients = scalar<std::size_t>(v, field);
    } else if (key == "rounds") {
      f.rounds = scalar<std::size_t>(v, field);
    } else if (key == "local_epochs") {
      f.local_epochs = scalar<std::size_t>(v, field);
    } else if (key == "sigmas") {
      f.sigmas = sigma_list(v, field);
    } else if (key == "per_client") {
      if (v.IsScalar() && v.as<std::string>() == "auto") {
        f.per_client_auto = true;
      } else {
        f.per_client = sigma_list(v, field);
      }
    } else if (key == "per_client_auto") {
      f.per_client_auto = scalar<bool>(v, field);
    } else if (key == "upload_sigma") {
      f.upload_sigma = scalar<double>(v, field);
    } else {
      return false;
    }
    return true;
  });
}

ModelSpec resolve_model(const YAML::Node& node, const DatasetConfig& d) {
  if (node.IsScalar()) {
    const auto name = node.as<std::string>();
    if (name == "model_s") {
      if (d.kind == "cifar10") return model_s_spec(32, 3, 10);
      return model_s_spec(d.synth.hw, d.synth.channels, d.synth.classes);
    }
    if (auto spec = builtin_spec(name)) return *spec;
    config_error("model", "unknown model '" + name + "'");
  }
  try {
    return parse_model_spec(YAML::Dump(node));
  } catch (const ConfigError& e) {
    config_error("model", e.what());
  }
}

ordered_json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Map: {
      ordered_json out = ordered_json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return out;
    }
    case YAML::NodeType::Sequence: {
      ordered_json out = ordered_json::array();
      for (const auto& v : node) out.push_back(yaml_to_json(v));
      return out;
    }
    case YAML::NodeType::Scalar: {
      const auto text = node.as<std::string>();
      if (text == "true" || text == "false") return text == "true";
      std::uint64_t u = 0;
      if (YAML::convert<std::uint64_t>::decode(node, u) &&
          text.find_first_not_of("0123456789") == std::string::npos) {
        return u;
      }
      double d = 0.0;
      if (YAML::convert<double>::decode(node, d)) return d;
      return text;
    }
    default:
      return nullptr;
  }
}

std::string sigma_label(double sigma) { return fmt::format("{:.2f}", sigma); }

void score_sweep_of(SweepResult& sweep, const std::string& what) {
  try {
    score_sweep(sweep);
  } catch (const Error& e) {
    throw Error(what + ": " + e.what() +
                " (SNR needs a base run whose validation accuracy varies across epochs)");
  }
}

std::string join_sigmas(const std::vector<double>& sigmas) {
  std::string out;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (i) out += ';';
    out += sigma_label(sigmas[i]);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string now_utc() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     fmt::gmtime(std::chrono::system_clock::to_time_t(
                         std::chrono::system_clock::now())));
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// One centralized training run of an experiment.
struct Cell {
  std::string id;
  ModelSpec spec;
  Mechanism mechanism = Mechanism::kNone;
  double sigma = 0.0;
  std::size_t repeat = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t noise_seed = 0;
  bool keep_model = false;
};

struct CellOutput {
  TrainReport report;
  WeightSet weights;
};

// Run bookkeeping shared by every experiment.
class RunWriter {
 public:
  RunWriter(const ExperimentConfig& config) : config_(config), root_(config.output) {
    fs::create_directories(root_);
    started_ = now_utc();
  }

  const fs::path& root() const { return root_; }

  void csv(const std::string& name, const std::string& text) {
    write_text(root_ / name, text);
    csvs_.emplace_back(name);
  }

  void note_run(const std::string& id, const std::string& mechanism, double sigma,
                std::size_t repeat, std::uint64_t train_seed,
                std::uint64_t noise_seed) {
    runs_.push_back({{"id", id},
                     {"mechanism", mechanism},
                     {"sigma", sigma},
                     {"repeat", repeat},
                     {"train_seed", train_seed},
                     {"noise_seed", noise_seed}});
  }

  void store(const Cell& cell, const CellOutput& out) {
    note_run(cell.id, to_string(cell.mechanism), cell.sigma, cell.repeat,
             cell.train_seed, cell.noise_seed);
    write_text(root_ / "reports" / (cell.id + ".json"), report_to_json(out.report));
    write_text(root_ / "reports" / (cell.id + ".csv"), report_to_csv(out.report));
    if (cell.keep_model) save_model(cell.id, cell.spec, out.weights);
  }

  void save_model(const std::string& id, const ModelSpec& spec, const WeightSet& w) {
    fs::create_directories(root_ / "models");
    write_weight_file(w, root_ / "models" / (id + ".bin"));
    write_text(root_ / "models" / (id + ".yaml"), serialize_model_spec(spec));
  }

  void finish() {
    const std::string yaml = serialize_experiment_config(config_);
    ordered_json m;
    m["tool"] = "noisefed";
    m["version"] = NOISEFED_VERSION;
    m["precision"] = "float64";
    m["pixel_storage"] = "float32";
    m["experiment"] = to_string(config_.experiment);
    m["master_seed"] = config_.seed;
    m["workers"] = worker_count(config_.workers);
    m["config"] = yaml_to_json(YAML::Load(yaml));
    m["config_yaml"] = yaml;
    m["runs"] = runs_;
    ordered_json outputs = ordered_json::array();
    for (const auto& p : csvs_) outputs.push_back(p.generic_string());
    m["outputs"] = outputs;
    m["started_at"] = started_;
    m["finished_at"] = now_utc();
    write_text(root_ / "manifest.json", m.dump(2) + "\n");
  }

  const std::vector<fs::path>& csvs() const { return csvs_; }

 private:
  const ExperimentConfig& config_;
  fs::path root_;
  std::string started_;
  ordered_json runs_ = ordered_json::array();
  std::vector<fs::path> csvs_;
};

std::vector<CellOutput> run_cells(const std::vector<Cell>& cells,
                                  const ExperimentConfig& config,
                                  const Dataset& data) {
  std::vector<CellOutput> out(cells.size());
  run_tasks(cells.size(), worker_count(config.workers), [&](std::size_t i) {
    const Cell& cell = cells[i];
    Model model = Model::build(cell.spec, cell.train_seed);
    TrainConfig tc = config.training;
    tc.seed = cell.train_seed;
    NoisePlan plan;
    plan.mechanism = cell.mechanism;
    plan.sigma = cell.sigma;
    plan.base_seed = cell.noise_seed;
    out[i].report = train(model, data, tc, plan);
    if (cell.keep_model) out[i].weights = extract_weights(model);
  });
  return out;
}

SweepRow sweep_row(const TrainReport& report) {
  SweepRow row;
  row.sigma = report.sigma;
  row.train_acc = report.per_epoch.empty() ? 0.0 : report.per_epoch.back().train_acc;
  row.val_series.values = report.val_accuracies();
  row.val_series.sigma = report.sigma;
  row.test_acc = report.test.accuracy;
  row.test_loss = report.test.loss;
  return row;
}

void run_sweep(const ExperimentConfig& config, const Dataset& data, RunWriter& w) {
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (std::size_t k = 0; k < config.sigmas.size(); ++k) {
      const double s = config.sigmas[k];
      cells.push_back({.id = fmt::format("{}_sigma{}_r{}", to_string(config.mechanism),
                                         sigma_label(s), r),
                       .spec = config.model,
                       .mechanism = config.mechanism,
                       .sigma = s,
                       .repeat = r,
                       .train_seed = repeat_train_seed(config.seed, r),
                       .noise_seed = cell_noise_seed(config.seed, r, k),
                       .keep_model = r == 0});
    }
  }
  const auto results = run_cells(cells, config, data);
  for (std::size_t i = 0; i < cells.size(); ++i) w.store(cells[i], results[i]);

  for (std::size_t r = 0; r < config.repeats; ++r) {
    SweepResult sweep;
    for (std::size_t k = 0; k < config.sigmas.size(); ++k) {
      sweep.rows.push_back(sweep_row(results[r * config.sigmas.size() + k].report));
    }
    score_sweep_of(sweep, fmt::format("sweep repeat {}", r));
    w.csv(r == 0 ? "sweep.csv" : fmt::format("sweep_repeat{}.csv", r),
          sweep_to_csv(sweep));
  }
}

void run_multi_vs_single(const ExperimentConfig& config, const Dataset& data,
                         RunWriter& w) {
  const std::size_t n = config.model.noise_sites();
  const double single_sigma = equivalent_single_sigma(n, config.sigma);
  const ModelSpec single = single_noise_layer(config.model);
  struct Variant {
    std::string name;
    const ModelSpec* spec;
    Mechanism mechanism;
    double sigma;
    std::size_t layers;
  };
  const std::vector<Variant> variants = {
      {"base", &config.model, Mechanism::kNone, 0.0, 0},
      {"multi", &config.model, Mechanism::kHiddenLayers, config.sigma, n},
      {"single", &single, Mechanism::kHiddenLayers, single_sigma, 1},
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (std::size_t k = 0; k < variants.size(); ++k) {
      const Variant& v = variants[k];
      cells.push_back({.id = fmt::format("{}_r{}", v.name, r),
                       .spec = *v.spec,
                       .mechanism = v.mechanism,
                       .sigma = v.sigma,
                       .repeat = r,
                       .train_seed = repeat_train_seed(config.seed, r),
                       .noise_seed = cell_noise_seed(config.seed, r, k),
                       .keep_model = r == 0});
    }
  }
  const auto results = run_cells(cells, config, data);
  for (std::size_t i = 0; i < cells.size(); ++i) w.store(cells[i], results[i]);

  std::string csv = "variant,noise_layers,sigma,train_acc,test_acc,test_loss\n";
  for (std::size_t k = 0; k < variants.size(); ++k) {
    std::vector<double> train_acc, test_acc, test_loss;
    for (std::size_t r = 0; r < config.repeats; ++r) {
      const TrainReport& rep = results[r * variants.size() + k].report;
      train_acc.push_back(sweep_row(rep).train_acc);
      test_acc.push_back(rep.test.accuracy);
      test_loss.push_back(rep.test.loss);
    }
    csv += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f}\n", variants[k].name,
                       variants[k].layers, sigma_label(variants[k].sigma),
                       mean(train_acc), mean(test_acc), mean(test_loss));
  }
  w.csv("comparison.csv", csv);
}

Dataset with_train_rows(const Dataset& data, const std::vector<std::size_t>& rows) {
  Dataset out = data;
  out.train = rows;
  return out;
}

void run_federated(const ExperimentConfig& config, const Dataset& data, RunWriter& w) {
  const FederatedSection& f = *config.federated;
  const std::uint64_t train_seed = repeat_train_seed(config.seed, 0);

  auto fed_config = [&](std::vector<double> sigmas, std::size_t cell) {
    FederatedConfig fc;
    fc.num_clients = f.clients;
    fc.rounds = f.rounds;
    fc.local_epochs = f.local_epochs;
    fc.per_client_sigma = std::move(sigmas);
    fc.train = config.training;
    fc.train.seed = train_seed;
    fc.seed = train_seed;
    fc.noise_seed = cell_noise_seed(config.seed, 0, cell);
    fc.upload_sigma = f.upload_sigma;
    fc.workers = config.workers;
    return fc;
  };

  std::string summary = "run,sigmas,global_acc,global_loss\n";
  bool first = true;
  auto run_one = [&](const std::string& name, const FederatedConfig& fc) {
    Model global = Model::build(config.model, fc.seed);
    const auto records = run_rounds(fc, data, config.model, &global);
    const std::string log = rounds_to_csv(records);
    w.csv("rounds_" + name + ".csv", log);
    if (first) {
      w.csv("rounds.csv", log);
      first = false;
    }
    w.note_run(name, to_string(Mechanism::kHiddenLayers),
               fc.per_client_sigma.front(), 0, fc.train.seed, fc.noise_seed);
    w.save_model(name, config.model, extract_weights(global));
    const RoundRecord& last = records.back();
    summary += fmt::format("{},{},{:.6f},{:.6f}\n", name, join_sigmas(fc.per_client_sigma),
                           last.global_accuracy, last.global_loss);
  };

  std::size_t cell = 0;
  for (double s : f.sigmas) run_one("sigma_" + sigma_label(s), fed_config({s}, cell++));
  if (!f.per_client.empty()) run_one("per_client", fed_config(f.per_client, cell));
  ++cell;

  if (f.per_client_auto) {
    // Each client sweeps noise.sigmas on its own shard; its sigma is the
    // SNR-optimal level of that sweep.
    const auto shards = partition(data.train, f.clients, train_seed);
    std::vector<double> chosen;
    for (std::size_t i = 0; i < f.clients; ++i) {
      const Dataset local = with_train_rows(data, shards[i]);
      const std::uint64_t base = derive_seed(config.seed, kLocalSweepSite, i);
      std::vector<Cell> cells;
      for (std::size_t k = 0; k < config.sigmas.size(); ++k) {
        cells.push_back({.id = fmt::format("client{}_sigma{}", i + 1,
                                           sigma_label(config.sigmas[k])),
                         .spec = config.model,
                         .mechanism = Mechanism::kHiddenLayers,
                         .sigma = config.sigmas[k],
                         .train_seed = client_seed(train_seed, i),
                         .noise_seed = derive_seed(base, k)});
      }
      const auto results = run_cells(cells, config, local);
      SweepResult sweep;
      for (std::size_t k = 0; k < cells.size(); ++k) {
        w.store(cells[k], results[k]);
        sweep.rows.push_back(sweep_row(results[k].report));
      }
      score_sweep_of(sweep, fmt::format("client {} sweep", i + 1));
      w.csv(fmt::format("client_sweeps/client_{}.csv", i + 1), sweep_to_csv(sweep));
      chosen.push_back(optimal_sigma_by_snr(sweep));
    }
    run_one("per_client_auto", fed_config(chosen, cell));
  }
  w.csv("federated_summary.csv", summary);
}

void run_mechanisms(const ExperimentConfig& config, const Dataset& data, RunWriter& w) {
  std::vector<Mechanism> groups = {Mechanism::kNone};
  for (Mechanism m : config.mechanisms) {
    if (m != Mechanism::kNone) groups.push_back(m);
  }
  const auto group_name = [](std::size_t g, Mechanism m) {
    return g == 0 ? std::string("base") : to_string(m);
  };

  std::vector<Cell> cells;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double s = g == 0 ? 0.0 : config.sigma;
      cells.push_back({.id = fmt::format("{}_sigma{}_r{}", group_name(g, groups[g]),
                                         sigma_label(s), r),
                       .spec = config.model,
                       .mechanism = groups[g],
                       .sigma = s,
                       .repeat = r,
                       .train_seed = repeat_train_seed(config.seed, r),
                       .noise_seed = cell_noise_seed(config.seed, r, g),
                       .keep_model = r == 0});
    }
  }
  const auto results = run_cells(cells, config, data);
  for (std::size_t i = 0; i < cells.size(); ++i) w.store(cells[i], results[i]);

  std::string runs = "group,mechanism,sigma,repeat,train_acc,test_acc,test_loss\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::size_t g = i % groups.size();
    const TrainReport& rep = results[i].report;
    runs += fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f}\n", group_name(g, groups[g]),
                        to_string(groups[g]), sigma_label(cells[i].sigma), cells[i].repeat,
                        sweep_row(rep).train_acc, rep.test.accuracy, rep.test.loss);
  }
  w.csv("mechanism_runs.csv", runs);

  std::string summary = "group,mechanism,sigma,train_acc,test_acc,test_loss\n";
  std::vector<double> mean_test(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<double> tr, te, tl;
    for (std::size_t r = 0; r < config.repeats; ++r) {
      const TrainReport& rep = results[r * groups.size() + g].report;
      tr.push_back(sweep_row(rep).train_acc);
      te.push_back(rep.test.accuracy);
      tl.push_back(rep.test.loss);
    }
    mean_test[g] = mean(te);
    summary += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f}\n", group_name(g, groups[g]),
                           to_string(groups[g]), sigma_label(cells[g].sigma), mean(tr),
                           mean(te), mean(tl));
  }
  w.csv("mechanisms.csv", summary);

  if (!config.mechanism_grid) return;
  // Top three noisy mechanisms by mean test accuracy; earlier groups win ties.
  std::vector<std::size_t> order;
  for (std::size_t g = 1; g < groups.size(); ++g) order.push_back(g);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mean_test[a] > mean_test[b];
  });
  order.resize(std::min<std::size_t>(order.size(), 3));

  std::vector<Cell> grid;
  std::size_t cell = groups.size();
  for (std::size_t g : order) {
    for (double s : config.grid_sigmas) {
      for (std::size_t r = 0; r < config.repeats; ++r) {
        grid.push_back({.id = fmt::format("grid_{}_sigma{}_r{}", to_string(groups[g]),
                                          sigma_label(s), r),
                        .spec = config.model,
                        .mechanism = groups[g],
                        .sigma = s,
                        .repeat = r,
                        .train_seed = repeat_train_seed(config.seed, r),
                        .noise_seed = cell_noise_seed(config.seed, r, cell)});
      }
      ++cell;
    }
  }
  const auto grid_results = run_cells(grid, config, data);
  std::string csv = "mechanism,sigma,train_acc,test_acc,test_loss\n";
  for (std::size_t i = 0; i < grid.size(); i += config.repeats) {
    std::vector<double> tr, te, tl;
    for (std::size_t r = 0; r < config.repeats; ++r) {
      w.store(grid[i + r], grid_results[i + r]);
      const TrainReport& rep = grid_results[i + r].report;
      tr.push_back(sweep_row(rep).train_acc);
      te.push_back(rep.test.accuracy);
      tl.push_back(rep.test.loss);
    }
    csv += fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", to_string(grid[i].mechanism),
                       sigma_label(grid[i].sigma), mean(tr), mean(te), mean(tl));
  }
  w.csv("mechanism_grid.csv", csv);
}

// (H, W, C) -> channel maps tiled on a grid with one-pixel gaps, each map
// min-max scaled to [0, 1] on its own.
Tensor tile_channels(const Tensor& maps) {
  const std::size_t h = maps.dim(0), w = maps.dim(1), c_n = maps.dim(2);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c_n))));
  const std::size_t rows = (c_n + cols - 1) / cols;
  const std::size_t out_w = cols * (w + 1) - 1, out_h = rows * (h + 1) - 1;
  Tensor out({out_h, out_w}, 0.0);
  for (std::size_t c = 0; c < c_n; ++c) {
    double lo = maps[c], hi = maps[c];
    for (std::size_t p = 0; p < h * w; ++p) {
      lo = std::min(lo, maps[p * c_n + c]);
      hi = std::max(hi, maps[p * c_n + c]);
    }
    const std::size_t oy = (c / cols) * (h + 1), ox = (c % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = maps[(y * w + x) * c_n + c];
        out[(oy + y) * out_w + ox + x] = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      }
    }
  }
  return out;
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSweepCentralized: return "sweep_centralized";
    case ExperimentKind::kMultiVsSingleLayer: return "multi_vs_single_layer";
    case ExperimentKind::kFederatedSweep: return "federated_sweep";
    case ExperimentKind::kMechanismComparison: return "mechanism_comparison";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (auto k : {ExperimentKind::kSweepCentralized, ExperimentKind::kMultiVsSingleLayer,
                 ExperimentKind::kFederatedSweep, ExperimentKind::kMechanismComparison}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("config: experiment: unknown experiment '" + name + "'");
}

std::vector<double> default_sigma_grid() {
  std::vector<double> grid = {0.0};
  for (int i = 1; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

void ExperimentConfig::validate() const {
  check_sigmas(sigmas, "noise.sigmas");
  if (std::find(sigmas.begin(), sigmas.end(), 0.0) == sigmas.end()) {
    config_error("noise.sigmas", "grid must contain 0 (the base model row)");
  }
  if (!std::is_sorted(sigmas.begin(), sigmas.end())) {
    config_error("noise.sigmas", "grid must be sorted");
  }
  if (!std::isfinite(sigma) || sigma < 0.0) config_error("noise.sigma", "must be >= 0");
  check_sigmas(grid_sigmas, "noise.grid_sigmas");
  if (repeats == 0) config_error("repeats", "must be >= 1");
  try {
    training.validate();
  } catch (const Error& e) {
    config_error("training", e.what());
  }
  if (training.epochs == 0) config_error("training.epochs", "must be >= 1");
  const bool needs_snr =
      experiment == ExperimentKind::kSweepCentralized ||
      (experiment == ExperimentKind::kFederatedSweep && federated &&
       federated->per_client_auto);
  if (needs_snr && training.epochs < 2) {
    config_error("training.epochs", "SNR needs at least 2 epochs of validation accuracy");
  }

  if (dataset.kind == "cifar10") {
    if (dataset.path.empty()) config_error("dataset.path", "required for cifar10");
    if (dataset.subset != 0 && dataset.subset < 6) {
      config_error("dataset.subset", "must be 0 (everything) or >= 6");
    }
  } else {
    if (dataset.synth.classes < 2) config_error("dataset.classes", "must be >= 2");
    if (dataset.synth.per_class < 6) config_error("dataset.per_class", "must be >= 6");
    if (dataset.synth.hw == 0) config_error("dataset.hw", "must be >= 1");
    if (dataset.synth.channels == 0) config_error("dataset.channels", "must be >= 1");
    if (!(dataset.synth.separation >= 0.0)) {
      config_error("dataset.separation", "must be >= 0");
    }
  }
  const Shape data_shape = dataset.kind == "cifar10"
                               ? Shape{32, 32, 3}
                               : Shape{dataset.synth.hw, dataset.synth.hw,
                                       dataset.synth.channels};
  if (model.input_shape != data_shape) {
    config_error("model", fmt::format("input shape {} does not match the dataset's {}",
                                      shape_to_string(model.input_shape),
                                      shape_to_string(data_shape)));
  }
  const std::size_t classes = dataset.kind == "cifar10" ? 10 : dataset.synth.classes;
  if (model.num_classes != classes) {
    config_error("model", fmt::format("{} output classes, dataset has {}",
                                      model.num_classes, classes));
  }

  const bool needs_sites =
      (experiment == ExperimentKind::kSweepCentralized &&
       mechanism == Mechanism::kHiddenLayers) ||
      experiment == ExperimentKind::kMultiVsSingleLayer ||
      experiment == ExperimentKind::kFederatedSweep ||
      (experiment == ExperimentKind::kMechanismComparison &&
       std::find(mechanisms.begin(), mechanisms.end(), Mechanism::kHiddenLayers) !=
           mechanisms.end());
  if (needs_sites && model.noise_sites() == 0) {
    config_error("model", "hidden-layer noise needs Gaussian noise layers in the model");
  }
  if (experiment == ExperimentKind::kMechanismComparison && mechanisms.empty()) {
    config_error("noise.mechanisms", "must not be empty");
  }
  if (experiment == ExperimentKind::kFederatedSweep) {
    if (!federated) config_error("federated", "section required for federated_sweep");
    const FederatedSection& f = *federated;
    if (f.clients == 0) config_error("federated.clients", "must be >= 1");
    if (f.rounds == 0) config_error("federated.rounds", "must be >= 1");
    if (f.local_epochs == 0) config_error("federated.local_epochs", "must be >= 1");
    check_sigmas(f.sigmas, "federated.sigmas");
    if (f.sigmas.empty() && f.per_client.empty() && !f.per_client_auto) {
      config_error("federated.sigmas", "nothing to run");
    }
    for (std::size_t i = 0; i < f.per_client.size(); ++i) {
      if (!std::isfinite(f.per_client[i]) || f.per_client[i] < 0.0) {
        config_error(fmt::format("federated.per_client[{}]", i), "must be >= 0");
      }
    }
    if (!f.per_client.empty() && f.per_client.size() != f.clients) {
      config_error("federated.per_client",
                   fmt::format("expected {} values, got {}", f.clients, f.per_client.size()));
    }
    if (!std::isfinite(f.upload_sigma) || f.upload_sigma < 0.0) {
      config_error("federated.upload_sigma", "must be >= 0");
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: invalid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config: expected a mapping at the top level");
  if (!root["experiment"]) config_error("experiment", "required");

  ExperimentConfig c;
  c.experiment = parse_experiment_kind(scalar<std::string>(root["experiment"], "experiment"));
  c.sigmas = default_sigma_grid();
  c.mechanisms = {Mechanism::kNone,    Mechanism::kInput,     Mechanism::kHiddenLayers,
                  Mechanism::kWeights, Mechanism::kGradients, Mechanism::kLabels};
  c.dataset.synth.separation = 2.0;
  c.training.epochs = 10;
  if (c.experiment == ExperimentKind::kMultiVsSingleLayer ||
      c.experiment == ExperimentKind::kMechanismComparison) {
    c.repeats = 3;
  }
  YAML::Node model_node;
  for_each_key(root, "", [&](const std::string& key, const YAML::Node& v,
                             const std::string& field) {
    if (key == "experiment") {
    } else if (key == "seed") {
      c.seed = scalar<std::uint64_t>(v, field);
    } else if (key == "output") {
      c.output = scalar<std::string>(v, field);
    } else if (key == "workers") {
      c.workers = scalar<std::size_t>(v, field);
    } else if (key == "repeats") {
      c.repeats = scalar<std::size_t>(v, field);
    } else if (key == "model") {
      model_node = v;
    } else if (key == "dataset") {
      parse_dataset(v, c.dataset);
    } else if (key == "noise") {
      parse_noise(v, c);
    } else if (key == "training") {
      parse_training(v, c.training);
    } else if (key == "federated") {
      c.federated.emplace();
      parse_federated(v, *c.federated);
    } else {
      return false;
    }
    return true;
  });
  c.model = model_node ? resolve_model(model_node, c.dataset)
                       : resolve_model(YAML::Node("model_s"), c.dataset);
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str());
}

std::string serialize_experiment_config(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "experiment" << YAML::Value << to_string(c.experiment);
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "output" << YAML::Value << c.output.generic_string();
  out << YAML::Key << "workers" << YAML::Value << c.workers;
  out << YAML::Key << "repeats" << YAML::Value << c.repeats;

  out << YAML::Key << "dataset" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << c.dataset.kind;
  if (c.dataset.kind == "cifar10") {
    out << YAML::Key << "path" << YAML::Value << c.dataset.path.generic_string();
    out << YAML::Key << "subset" << YAML::Value << c.dataset.subset;
  } else {
    out << YAML::Key << "classes" << YAML::Value << c.dataset.synth.classes;
    out << YAML::Key << "per_class" << YAML::Value << c.dataset.synth.per_class;
    out << YAML::Key << "hw" << YAML::Value << c.dataset.synth.hw;
    out << YAML::Key << "channels" << YAML::Value << c.dataset.synth.channels;
    out << YAML::Key << "separation" << YAML::Value << c.dataset.synth.separation;
  }
  out << YAML::Key << "seed" << YAML::Value << c.dataset.seed;
  out << YAML::EndMap;

  out << YAML::Key << "model" << YAML::Value << YAML::Load(serialize_model_spec(c.model));

  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mechanism" << YAML::Value << to_string(c.mechanism);
  out << YAML::Key << "sigmas" << YAML::Value << YAML::Flow << c.sigmas;
  out << YAML::Key << "sigma" << YAML::Value << c.sigma;
  out << YAML::Key << "mechanisms" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (Mechanism m : c.mechanisms) out << to_string(m);
  out << YAML::EndSeq;
  out << YAML::Key << "grid" << YAML::Value << c.mechanism_grid;
  out << YAML::Key << "grid_sigmas" << YAML::Value << YAML::Flow << c.grid_sigmas;
  out << YAML::EndMap;

  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << c.training.batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << c.training.learning_rate;
  out << YAML::Key << "momentum" << YAML::Value << c.training.momentum;
  out << YAML::Key << "epochs" << YAML::Value << c.training.epochs;
  out << YAML::EndMap;

  if (c.federated) {
    const FederatedSection& f = *c.federated;
    out << YAML::Key << "federated" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "clients" << YAML::Value << f.clients;
    out << YAML::Key << "rounds" << YAML::Value << f.rounds;
    out << YAML::Key << "local_epochs" << YAML::Value << f.local_epochs;
    out << YAML::Key << "sigmas" << YAML::Value << YAML::Flow << f.sigmas;
    if (!f.per_client.empty()) {
      out << YAML::Key << "per_client" << YAML::Value << YAML::Flow << f.per_client;
    }
    out << YAML::Key << "per_client_auto" << YAML::Value << f.per_client_auto;
    out << YAML::Key << "upload_sigma" << YAML::Value << f.upload_sigma;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::uint64_t repeat_train_seed(std::uint64_t master, std::size_t repeat) {
  return derive_seed(master, kTrainSite, repeat);
}

std::uint64_t cell_noise_seed(std::uint64_t master, std::size_t repeat,
                              std::size_t cell) {
  return derive_seed(derive_seed(master, kNoiseSite, repeat), cell);
}

Dataset load_dataset(const DatasetConfig& config) {
  if (config.kind == "cifar10") {
    Dataset data = load_cifar10(config.path, config.seed);
    return config.subset == 0 ? data : subset(data, config.subset, config.seed);
  }
  SynthOptions opts = config.synth;
  opts.seed = config.seed;
  return synth_dataset(opts);
}

std::vector<fs::path> run_experiment(const ExperimentConfig& config) {
  config.validate();
  Dataset data = load_dataset(config.dataset);
  if (config.federated && config.federated->clients > data.train.size()) {
    config_error("federated.clients",
                 fmt::format("{} clients for {} training rows", config.federated->clients,
                             data.train.size()));
  }
  RunWriter writer(config);
  switch (config.experiment) {
    case ExperimentKind::kSweepCentralized:
      run_sweep(config, data, writer);
      break;
    case ExperimentKind::kMultiVsSingleLayer:
      run_multi_vs_single(config, data, writer);
      break;
    case ExperimentKind::kFederatedSweep:
      run_federated(config, data, writer);
      break;
    case ExperimentKind::kMechanismComparison:
      run_mechanisms(config, data, writer);
      break;
  }
  writer.finish();
  return writer.csvs();
}

std::vector<fs::path> rerun_from_manifest(const fs::path& manifest,
                                          const fs::path& output) {
  ordered_json m;
  try {
    m = ordered_json::parse(read_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest '" + manifest.string() + "': " + e.what());
  }
  if (!m.contains("config_yaml") || !m["config_yaml"].is_string()) {
    throw ConfigError("manifest '" + manifest.string() + "': missing config_yaml");
  }
  ExperimentConfig config = parse_experiment_config(m["config_yaml"].get<std::string>());
  config.output = output;
  return run_experiment(config);
}

std::vector<fs::path> export_figures(const fs::path& run_dir) {
  const fs::path manifest = run_dir / "manifest.json";
  const auto m = ordered_json::parse(read_text(manifest));
  const ExperimentConfig config =
      parse_experiment_config(m.at("config_yaml").get<std::string>());
  const Dataset data = load_dataset(config.dataset);
  if (data.test.empty()) throw Error("export-figs: dataset has no test rows");
  const std::size_t row = data.test.front();
  const fs::path figs = run_dir / "figs";
  fs::create_directories(figs);

  std::vector<fs::path> written;
  RngStream rng = RngStream::child(config.seed, kFigureSite);
  for (auto& p : export_perturbation_grid(data.image(row), kFigureSigmas, rng,
                                          (figs / "perturbed").string())) {
    written.push_back(std::move(p));
  }

  std::vector<fs::path> models;
  if (fs::exists(run_dir / "models")) {
    for (const auto& entry : fs::directory_iterator(run_dir / "models")) {
      if (entry.path().extension() == ".bin") models.push_back(entry.path());
    }
  }
  std::sort(models.begin(), models.end());
  const std::vector<std::size_t> one = {row};
  const Tensor batch = data.images(one);
  for (const fs::path& bin : models) {
    fs::path spec_path = bin;
    spec_path.replace_extension(".yaml");
    Model model = Model::build(load_model_spec(spec_path.string()), 0);
    load_weights(model, read_weight_file(bin));
    ForwardOptions opts;
    opts.record = true;
    const ForwardResult result = model.forward(batch, opts);
    std::size_t conv = 0;
    for (std::size_t i = 0; i < model.num_layers() && conv < 2; ++i) {
      if (model.layer(i).kind() != LayerKind::kConv2D) continue;
      const Tensor& act = result.activation(i);
      const Tensor maps = act.reshaped({act.dim(1), act.dim(2), act.dim(3)});
      fs::path out = figs / fmt::format("{}_conv{}.pgm", bin.stem().string(), ++conv);
      export_pgm(tile_channels(maps), out, PgmScale::kUnitRange);
      written.push_back(std::move(out));
    }
  }
  return written;
}

}  // namespace noisefed
