#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "noisefed/model_spec.hpp"
#include "noisefed/tensor.hpp"

namespace noisefed {

enum class Mode { kTrain, kEval };

/// Per-call knobs of a forward pass. Streams for dropout and Gaussian noise
/// layers are keyed by `step` (the global mini-batch index), so replaying a
/// step replays its randomness.
struct ForwardOptions {
  Mode mode = Mode::kEval;
  std::uint64_t step = 0;
  std::uint64_t dropout_seed = 0;
  /// Set when hidden-layer noise is active; GaussianNoise layers are
  /// identity otherwise.
  std::optional<double> hidden_sigma;
  std::uint64_t noise_seed = 0;
  /// Keep per-layer inputs in eval mode too (feature-map export).
  bool record = false;
};

struct LayerCache {
  Tensor input;
  Tensor output;
  Tensor aux;  // layer-specific: BN normalized input, dropout mask
  Tensor stats;  // BN per-channel inverse std
  std::vector<std::uint32_t> index;  // max-pool argmax
};

struct ForwardResult {
  Tensor logits;
  std::vector<LayerCache> cache;
  bool trainable_cache = false;

  /// Output of layer `i` for a recorded pass.
  const Tensor& activation(std::size_t i) const;
};

/// One tensor per trainable parameter, aligned with Model::parameters().
using Gradients = std::vector<Tensor>;

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual Tensor forward(const Tensor& x, const ForwardOptions& opts,
                         LayerCache& cache) = 0;
  /// Gradient w.r.t. the layer input; writes parameter gradients into
  /// `param_grads` (sized like parameters()).
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                          std::span<Tensor> param_grads) const = 0;

  virtual std::vector<Tensor*> parameters() { return {}; }
  virtual std::vector<Tensor*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

std::unique_ptr<Layer> make_layer(const ModelSpec& spec, std::size_t index,
                                  const Shape& input_shape,
                                  std::uint64_t model_seed);

/// Trainable network built from a ModelSpec. Copying deep-copies every
/// layer, so copies train independently.
class Model {
 public:
  /// Deterministic He-normal init for conv/dense weights (zero bias), gamma=1
  /// and beta=0 for batch norm, moving mean 0 and variance 1.
  static Model build(const ModelSpec& spec, std::uint64_t seed);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  ForwardResult forward(const Tensor& batch, const ForwardOptions& opts);
  /// Gradients of the mean cross-entropy between softmax(logits) and
  /// `targets` (N x classes, soft targets allowed).
  Gradients backward(const ForwardResult& result, const Tensor& targets) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  /// Non-trainable state: batch-norm moving mean and variance.
  std::vector<Tensor*> buffers();
  std::vector<const Tensor*> buffers() const;

  std::vector<Tensor>& momentum() { return momentum_; }
  void reset_optimizer_state();

  std::size_t trainable_count() const;
  std::size_t non_trainable_count() const;

 private:
  Model() = default;

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Tensor> momentum_;
};

/// Mean over the batch of -sum_k y_k log softmax(z)_k. Writes d loss / d z
/// into `grad` when non-null.
double softmax_cross_entropy(const Tensor& logits, const Tensor& targets,
                             Tensor* grad = nullptr);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace noisefed
