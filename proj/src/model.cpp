#include "noisefed/model.hpp"

#include <cmath>
#include <limits>

#include "noisefed/rng.hpp"

namespace noisefed {

const Tensor& ForwardResult::activation(std::size_t i) const {
  if (i + 1 < cache.size()) return cache.at(i + 1).input;
  if (i + 1 == cache.size()) return logits;
  throw Error("activation index " + std::to_string(i) + " out of range");
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  const std::vector<Shape> shapes = propagate_shapes(spec);
  Model model;
  model.spec_ = spec;
  Shape in = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    model.layers_.push_back(make_layer(spec, i, in, seed));
    in = shapes[i];
  }
  model.reset_optimizer_state();
  return model;
}

Model::Model(const Model& other)
    : spec_(other.spec_), momentum_(other.momentum_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

ForwardResult Model::forward(const Tensor& batch, const ForwardOptions& opts) {
  Shape expected = spec_.input_shape;
  expected.insert(expected.begin(), batch.rank() > 0 ? batch.dim(0) : 0);
  if (batch.shape() != expected) {
    throw Error("model '" + spec_.name + "': batch shape " +
                shape_to_string(batch.shape()) + " does not match input " +
                shape_to_string(spec_.input_shape));
  }
  ForwardResult result;
  result.trainable_cache = opts.mode == Mode::kTrain;
  result.cache.resize(layers_.size());
  const bool keep_inputs = opts.mode == Mode::kTrain || opts.record;
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache& cache = result.cache[i];
    if (keep_inputs) cache.input = x;
    x = layers_[i]->forward(x, opts, cache);
    if (!x.all_finite()) {
      throw Error("non-finite activation at layer " + std::to_string(i) + " (" +
                  to_string(layers_[i]->kind()) + ")");
    }
  }
  result.logits = std::move(x);
  return result;
}

Gradients Model::backward(const ForwardResult& result,
                          const Tensor& targets) const {
  if (!result.trainable_cache || result.cache.size() != layers_.size()) {
    throw Error("backward needs the cache of a train-mode forward pass");
  }
  Tensor grad;
  softmax_cross_entropy(result.logits, targets, &grad);

  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& l : layers_) {
    offsets.push_back(total);
    total += l->parameters().size();
  }
  Gradients grads(total);
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const std::size_t n = layers_[i]->parameters().size();
    grad = layers_[i]->backward(grad, result.cache[i],
                                std::span<Tensor>(grads).subspan(offsets[i], n));
  }
  return grads;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (Tensor* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (Tensor* p : l->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Tensor*> Model::buffers() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (Tensor* b : l->buffers()) out.push_back(b);
  }
  return out;
}

std::vector<const Tensor*> Model::buffers() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (Tensor* b : l->buffers()) out.push_back(b);
  }
  return out;
}

void Model::reset_optimizer_state() {
  momentum_.clear();
  for (const Tensor* p : std::as_const(*this).parameters()) {
    momentum_.emplace_back(p->shape());
  }
}

std::size_t Model::trainable_count() const {
  std::size_t n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

std::size_t Model::non_trainable_count() const {
  std::size_t n = 0;
  for (const Tensor* b : buffers()) n += b->size();
  return n;
}

double softmax_cross_entropy(const Tensor& logits, const Tensor& targets,
                             Tensor* grad) {
  if (logits.rank() != 2 || targets.shape() != logits.shape()) {
    throw Error("cross-entropy: logits " + shape_to_string(logits.shape()) +
                " vs targets " + shape_to_string(targets.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (grad != nullptr) *grad = Tensor(logits.shape());
  double total = 0.0;
  std::vector<double> p(classes);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* z = logits.data() + n * classes;
    const double* y = targets.data() + n * classes;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) zmax = std::max(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      p[k] = std::exp(z[k] - zmax);
      sum += p[k];
    }
    const double log_sum = std::log(sum);
    double mass = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      if (y[k] != 0.0) total -= y[k] * (z[k] - zmax - log_sum);
      mass += y[k];
    }
    if (grad != nullptr) {
      double* g = grad->data() + n * classes;
      for (std::size_t k = 0; k < classes; ++k) {
        g[k] = (p[k] / sum * mass - y[k]) / static_cast<double>(batch);
      }
    }
  }
  return total / static_cast<double>(batch);
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw Error("label " + std::to_string(label) + " outside [0, " +
                  std::to_string(classes) + ")");
    }
    out[i * classes + static_cast<std::size_t>(label)] = 1.0;
  }
  return out;
}

}  // namespace noisefed
