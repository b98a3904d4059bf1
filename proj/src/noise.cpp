#include "noisefed/noise.hpp"

#include <algorithm>
#include <cmath>

namespace noisefed {

namespace {

void check_sigma(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw Error("noise sigma must be finite and >= 0, got " + std::to_string(sigma));
  }
}

void add_noise_in_place(std::span<double> values, double sigma, RngStream& rng) {
  for (double& v : values) v += rng.normal(sigma);
}

}  // namespace

std::string to_string(Mechanism mechanism) {
  switch (mechanism) {
    case Mechanism::kNone: return "none";
    case Mechanism::kInput: return "input";
    case Mechanism::kHiddenLayers: return "hidden_layers";
    case Mechanism::kWeights: return "weights";
    case Mechanism::kGradients: return "gradients";
    case Mechanism::kLabels: return "labels";
  }
  return "unknown";
}

Mechanism parse_mechanism(const std::string& name) {
  for (Mechanism m : {Mechanism::kNone, Mechanism::kInput, Mechanism::kHiddenLayers,
                      Mechanism::kWeights, Mechanism::kGradients, Mechanism::kLabels}) {
    if (to_string(m) == name) return m;
  }
  throw Error("unknown noise mechanism '" + name + "'");
}

void NoisePlan::validate() const {
  check_sigma(sigma);
  if (!(label_clip.lo < label_clip.hi)) {
    throw Error("label clip interval must satisfy lo < hi");
  }
}

Tensor apply_input_noise(const Tensor& batch, double sigma, RngStream& rng) {
  check_sigma(sigma);
  Tensor out = batch;
  if (sigma > 0.0) add_noise_in_place(out.values(), sigma, rng);
  return out;
}

Tensor gaussian_layer_forward(const Tensor& x, double sigma, Mode mode,
                              RngStream& rng) {
  check_sigma(sigma);
  Tensor out = x;
  if (mode == Mode::kTrain && sigma > 0.0) {
    add_noise_in_place(out.values(), sigma, rng);
  }
  return out;
}

void perturb_weights(Model& model, double sigma, RngStream& rng) {
  check_sigma(sigma);
  if (sigma == 0.0) return;
  for (Tensor* p : model.parameters()) add_noise_in_place(p->values(), sigma, rng);
}

Gradients perturb_gradients(Gradients grads, double sigma, RngStream& rng) {
  check_sigma(sigma);
  if (sigma > 0.0) {
    for (Tensor& g : grads) add_noise_in_place(g.values(), sigma, rng);
  }
  return grads;
}

Tensor perturb_labels(const Tensor& onehot, double sigma, RngStream& rng,
                      ClipRange clip) {
  check_sigma(sigma);
  if (!(clip.lo < clip.hi)) throw Error("label clip interval must satisfy lo < hi");
  Tensor out = onehot;
  if (sigma == 0.0) return out;
  for (double& v : out.values()) {
    v = std::clamp(v + rng.normal(sigma), clip.lo, clip.hi);
  }
  return out;
}

double compose_sigmas(std::span<const double> sigmas) {
  if (sigmas.empty()) throw Error("compose_sigmas needs at least one sigma");
  double variance = 0.0;
  for (double s : sigmas) {
    check_sigma(s);
    variance += s * s;
  }
  return std::sqrt(variance);
}

double equivalent_single_sigma(std::size_t n_layers, double sigma) {
  if (n_layers < 1) throw Error("equivalent_single_sigma needs n_layers >= 1");
  check_sigma(sigma);
  return std::sqrt(static_cast<double>(n_layers)) * sigma;
}

}  // namespace noisefed
