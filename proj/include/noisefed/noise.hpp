#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "noisefed/model.hpp"
#include "noisefed/rng.hpp"
#include "noisefed/tensor.hpp"

namespace noisefed {

enum class Mechanism { kNone, kInput, kHiddenLayers, kWeights, kGradients, kLabels };

std::string to_string(Mechanism mechanism);
/// Accepts none | input | hidden_layers | weights | gradients | labels.
Mechanism parse_mechanism(const std::string& name);

struct ClipRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Where and how much noise a training run receives.
struct NoisePlan {
  Mechanism mechanism = Mechanism::kNone;
  double sigma = 0.0;
  std::uint64_t base_seed = 0;
  ClipRange label_clip;

  /// Throws Error on sigma < 0 or an empty clip interval.
  void validate() const;
  bool is(Mechanism m) const { return mechanism == m; }
};

/// Stream sites under NoisePlan::base_seed. Gaussian noise layers use their
/// ordinal (0, 1, ...) as site; the other mechanisms sit far above that range.
namespace site {
inline constexpr std::uint64_t kInput = 1'000'001;
inline constexpr std::uint64_t kWeights = 1'000'002;
inline constexpr std::uint64_t kGradients = 1'000'003;
inline constexpr std::uint64_t kLabels = 1'000'004;
inline constexpr std::uint64_t kUpload = 1'000'005;
// Under the training seed rather than the noise seed.
inline constexpr std::uint64_t kDropoutBase = 2'000'000;
inline constexpr std::uint64_t kShuffle = 3'000'000;
}  // namespace site

/// batch + N(0, sigma^2) per element; the input is left untouched.
Tensor apply_input_noise(const Tensor& batch, double sigma, RngStream& rng);

/// Train: x + N(0, sigma^2) per element. Eval: identity.
Tensor gaussian_layer_forward(const Tensor& x, double sigma, Mode mode,
                              RngStream& rng);
/// Additive noise has unit Jacobian.
inline Tensor gaussian_layer_backward(const Tensor& grad_out) { return grad_out; }

/// Adds N(0, sigma^2) to every trainable parameter in place. Batch-norm
/// moving statistics are not touched.
void perturb_weights(Model& model, double sigma, RngStream& rng);

Gradients perturb_gradients(Gradients grads, double sigma, RngStream& rng);

/// clamp(y + N(0, sigma^2), clip.lo, clip.hi), no renormalization.
Tensor perturb_labels(const Tensor& onehot, double sigma, RngStream& rng,
                      ClipRange clip = {});

/// sqrt(sum sigma_i^2): total deviation of independent additive sources.
double compose_sigmas(std::span<const double> sigmas);

/// sqrt(n) * sigma: the single layer equivalent to n independent layers.
double equivalent_single_sigma(std::size_t n_layers, double sigma);

}  // namespace noisefed
