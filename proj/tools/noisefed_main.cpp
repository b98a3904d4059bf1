#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "noisefed/experiment.hpp"
#include "noisefed/model_spec.hpp"

namespace fs = std::filesystem;
using namespace noisefed;

namespace {

std::string grouped(std::size_t n) {
  std::string digits = std::to_string(n);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(i, ",");
  return digits;
}

ModelSpec resolve_spec(const std::string& name) {
  if (auto spec = builtin_spec(name)) return *spec;
  if (fs::exists(name)) return load_model_spec(name);
  throw ConfigError("unknown model '" + name +
                    "' (builtin: model1, model2, model3, model_s, or a YAML file)");
}

int count(const std::string& name, bool layers) {
  const ModelSpec spec = resolve_spec(name);
  const ParameterCount total = count_parameters(spec);
  std::cout << fmt::format("{}: input {}, {} classes, noise layers: {}\n", spec.name,
                           shape_to_string(spec.input_shape), spec.num_classes,
                           spec.noise_sites());
  if (layers) {
    const auto shapes = propagate_shapes(spec);
    const auto per_layer = layer_parameters(spec);
    std::cout << fmt::format("{:<4} {:<16} {:<18} {:>12}\n", "#", "layer", "output",
                             "params");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      std::cout << fmt::format("{:<4} {:<16} {:<18} {:>12}\n", i,
                               to_string(spec.layers[i].kind), shape_to_string(shapes[i]),
                               grouped(per_layer[i].total));
    }
  }
  std::cout << "Trainable params: " << grouped(total.trainable) << "\n"
            << "Non-trainable params: " << grouped(total.non_trainable) << "\n"
            << "Total params: " << grouped(total.total) << "\n";
  return 0;
}

void list(const std::vector<fs::path>& files, const fs::path& root) {
  for (const auto& f : files) std::cout << (root / f).string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Noise-infused training and federated learning experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run = app.add_subcommand("run", "Run an experiment from a YAML config");
  run->add_option("config", config_path, "Experiment config")->required();
  run->add_option("-o,--out", out_dir, "Output directory (overrides the config)");

  std::string spec_name;
  bool layers = false;
  auto* cnt = app.add_subcommand("count", "Print parameter counts of a model spec");
  cnt->add_option("spec", spec_name, "Builtin model name or YAML spec")->required();
  cnt->add_flag("-l,--layers", layers, "Per-layer breakdown");

  std::string run_dir;
  auto* figs = app.add_subcommand("export-figs", "Write PGM figures for a finished run");
  figs->add_option("run-dir", run_dir, "Run output directory")->required();

  std::string manifest;
  auto* rerun = app.add_subcommand("rerun", "Re-run the experiment recorded in a manifest");
  rerun->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  rerun->add_option("-o,--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      ExperimentConfig config = load_experiment_config(config_path);
      if (!out_dir.empty()) config.output = out_dir;
      list(run_experiment(config), config.output);
    } else if (*cnt) {
      return count(spec_name, layers);
    } else if (*figs) {
      for (const auto& f : export_figures(run_dir)) std::cout << f.string() << "\n";
    } else if (*rerun) {
      list(rerun_from_manifest(manifest, out_dir), out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "noisefed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "noisefed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
