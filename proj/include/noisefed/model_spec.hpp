#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "noisefed/tensor.hpp"

namespace noisefed {

enum class LayerKind {
  kConv2D,
  kBatchNorm,
  kMaxPool2D,
  kDropout,
  kFlatten,
  kDense,
  kGaussianNoise,
};

enum class Activation { kLinear, kRelu, kSoftmax };

std::string to_string(LayerKind kind);
std::string to_string(Activation activation);
LayerKind parse_layer_kind(const std::string& name);
Activation parse_activation(const std::string& name);

/// One entry of a model's layer list. Which fields matter depends on `kind`:
/// Conv2D and Dense use `units` (filters / neurons) and `activation`;
/// Dropout uses `rate`; GaussianNoise optionally pins its own `sigma` and
/// `seed`, otherwise it takes both from the noise plan.
struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  std::size_t units = 0;
  Activation activation = Activation::kLinear;
  double rate = 0.0;
  std::optional<double> sigma;
  std::optional<std::uint64_t> seed;

  static LayerSpec conv2d(std::size_t filters,
                          Activation act = Activation::kRelu);
  static LayerSpec batch_norm();
  static LayerSpec max_pool();
  static LayerSpec dropout(double rate);
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t units, Activation act = Activation::kRelu);
  static LayerSpec gaussian_noise(std::optional<double> sigma = std::nullopt,
                                  std::optional<std::uint64_t> seed = std::nullopt);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  // (H, W, C)
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 10;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;

  std::size_t noise_sites() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ParameterCount {
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
  std::size_t total = 0;
};

/// Per-sample output shape of every layer, in order. Throws Error naming the
/// first layer whose input shape it cannot accept, and checks the final
/// Dense/num_classes contract.
std::vector<Shape> propagate_shapes(const ModelSpec& spec);

ParameterCount count_parameters(const ModelSpec& spec);
std::vector<ParameterCount> layer_parameters(const ModelSpec& spec);

// Builtin architectures. model1/2/3 are the CIFAR-10 VGG-style networks with a
// noise site before every convolution except the first; model_s is the desk
// scale network used for CI-sized runs.
ModelSpec model1_spec();
ModelSpec model2_spec();
ModelSpec model3_spec();
ModelSpec model_s_spec(std::size_t hw = 8, std::size_t channels = 3,
                       std::size_t num_classes = 10);

/// Looks up "model1" | "model2" | "model3" | "model_s".
std::optional<ModelSpec> builtin_spec(const std::string& name);

/// Copy of `spec` without any GaussianNoise layer.
ModelSpec without_noise(const ModelSpec& spec);
/// Copy of `spec` keeping only the first GaussianNoise layer.
ModelSpec single_noise_layer(const ModelSpec& spec);

// Plain-text (YAML) form: name, input: [H, W, C], num_classes, and a list of
// layers, one entry per layer, e.g. `- {kind: conv2d, filters: 32}`.
ModelSpec parse_model_spec(const std::string& text);
ModelSpec load_model_spec(const std::string& path);
std::string serialize_model_spec(const ModelSpec& spec);

}  // namespace noisefed
