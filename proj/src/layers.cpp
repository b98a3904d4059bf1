#include <algorithm>
#include <cmath>

#include "noisefed/kernels.hpp"
#include "noisefed/model.hpp"
#include "noisefed/noise.hpp"
#include "noisefed/rng.hpp"

namespace noisefed {

namespace kern = kernels::parallel;

namespace {

void he_init(Tensor& weights, std::size_t fan_in, std::uint64_t seed) {
  RngStream rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& w : weights.values()) w = rng.normal(stddev);
}

void relu_in_place(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& output) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(output[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

class Conv2DLayer final : public Layer {
 public:
  Conv2DLayer(const Shape& in, const LayerSpec& spec, std::uint64_t seed)
      : relu_(spec.activation == Activation::kRelu),
        weights_({3, 3, in[2], spec.units}),
        bias_({spec.units}) {
    he_init(weights_, 9 * in[2], seed);
  }

  LayerKind kind() const override { return LayerKind::kConv2D; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts,
                 LayerCache& cache) override {
    const auto d = dims(x);
    Tensor out({d.batch, d.height, d.width, d.out_channels});
    kern::conv2d_forward(d, x.values(), weights_.values(), bias_.values(),
                         out.values());
    if (relu_) relu_in_place(out);
    if (opts.mode == Mode::kTrain && relu_) cache.output = out;
    return out;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const auto d = dims(cache.input);
    const Tensor g = relu_ ? relu_backward(grad_out, cache.output) : grad_out;
    grads[0] = Tensor(weights_.shape());
    grads[1] = Tensor(bias_.shape());
    kern::conv2d_backward_params(d, cache.input.values(), g.values(),
                                 grads[0].values(), grads[1].values());
    Tensor grad_in(cache.input.shape());
    kern::conv2d_backward_input(d, g.values(), weights_.values(),
                                grad_in.values());
    return grad_in;
  }

  std::vector<Tensor*> parameters() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2DLayer>(*this);
  }

 private:
  kernels::ConvDims dims(const Tensor& x) const {
    return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), weights_.dim(3)};
  }

  bool relu_;
  Tensor weights_;
  Tensor bias_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(const Shape& in, const LayerSpec& spec, std::uint64_t seed)
      : relu_(spec.activation == Activation::kRelu),
        weights_({in[0], spec.units}),
        bias_({spec.units}) {
    he_init(weights_, in[0], seed);
  }

  LayerKind kind() const override { return LayerKind::kDense; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts,
                 LayerCache& cache) override {
    const kernels::DenseDims d{x.dim(0), weights_.dim(0), weights_.dim(1)};
    Tensor out({d.batch, d.outputs});
    kern::dense_forward(d, x.values(), weights_.values(), bias_.values(),
                        out.values());
    if (relu_) relu_in_place(out);
    if (opts.mode == Mode::kTrain && relu_) cache.output = out;
    return out;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const kernels::DenseDims d{cache.input.dim(0), weights_.dim(0),
                               weights_.dim(1)};
    const Tensor g = relu_ ? relu_backward(grad_out, cache.output) : grad_out;
    grads[0] = Tensor(weights_.shape());
    grads[1] = Tensor(bias_.shape());
    kern::dense_backward_params(d, cache.input.values(), g.values(),
                                grads[0].values(), grads[1].values());
    Tensor grad_in(cache.input.shape());
    kern::dense_backward_input(d, g.values(), weights_.values(),
                               grad_in.values());
    return grad_in;
  }

  std::vector<Tensor*> parameters() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<DenseLayer>(*this);
  }

 private:
  bool relu_;
  Tensor weights_;
  Tensor bias_;
};

// Normalizes over every axis but the last (channels).
class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(std::size_t channels, double epsilon, double momentum)
      : epsilon_(epsilon),
        momentum_(momentum),
        gamma_({channels}, 1.0),
        beta_({channels}, 0.0),
        moving_mean_({channels}, 0.0),
        moving_var_({channels}, 1.0) {}

  LayerKind kind() const override { return LayerKind::kBatchNorm; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts,
                 LayerCache& cache) override {
    const std::size_t c_n = gamma_.size();
    const std::size_t rows = x.size() / c_n;
    Tensor out(x.shape());
    if (opts.mode == Mode::kEval) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const double inv = 1.0 / std::sqrt(moving_var_[c] + epsilon_);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t i = r * c_n + c;
          out[i] = (x[i] - moving_mean_[c]) * inv * gamma_[c] + beta_[c];
        }
      }
      return out;
    }
    std::vector<double> mean(c_n, 0.0), var(c_n, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) mean[c] += x[r * c_n + c];
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const double dev = x[r * c_n + c] - mean[c];
        var[c] += dev * dev;
      }
    }
    for (double& v : var) v /= static_cast<double>(rows);
    Tensor normalized(x.shape());
    Tensor inv_std({c_n});
    for (std::size_t c = 0; c < c_n; ++c) {
      inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon_);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        normalized[i] = (x[i] - mean[c]) * inv_std[c];
        out[i] = normalized[i] * gamma_[c] + beta_[c];
      }
    }
    for (std::size_t c = 0; c < c_n; ++c) {
      moving_mean_[c] = momentum_ * moving_mean_[c] + (1.0 - momentum_) * mean[c];
      moving_var_[c] = momentum_ * moving_var_[c] + (1.0 - momentum_) * var[c];
    }
    cache.aux = std::move(normalized);
    cache.stats = std::move(inv_std);
    return out;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor> grads) const override {
    const std::size_t c_n = gamma_.size();
    const std::size_t rows = grad_out.size() / c_n;
    const Tensor& xhat = cache.aux;
    Tensor dgamma({c_n}), dbeta({c_n});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        dgamma[c] += grad_out[i] * xhat[i];
        dbeta[c] += grad_out[i];
      }
    }
    // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)),
    // with dxhat = g * gamma, so both sums reduce to dbeta and dgamma.
    const double m = static_cast<double>(rows);
    Tensor grad_in(grad_out.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        grad_in[i] = gamma_[c] * cache.stats[c] / m *
                     (m * grad_out[i] - dbeta[c] - xhat[i] * dgamma[c]);
      }
    }
    grads[0] = std::move(dgamma);
    grads[1] = std::move(dbeta);
    return grad_in;
  }

  std::vector<Tensor*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&moving_mean_, &moving_var_}; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<BatchNormLayer>(*this);
  }

 private:
  double epsilon_;
  double momentum_;
  Tensor gamma_;
  Tensor beta_;
  Tensor moving_mean_;
  Tensor moving_var_;
};

class MaxPoolLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kMaxPool2D; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts,
                 LayerCache& cache) override {
    const kernels::PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    Tensor out({d.batch, d.height / 2, d.width / 2, d.channels});
    std::vector<std::uint32_t> argmax(out.size());
    kern::maxpool_forward(d, x.values(), out.values(), argmax);
    if (opts.mode == Mode::kTrain) cache.index = std::move(argmax);
    return out;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor>) const override {
    const Tensor& x = cache.input;
    const kernels::PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    Tensor grad_in(x.shape());
    kern::maxpool_backward(d, grad_out.values(), cache.index, grad_in.values());
    return grad_in;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<MaxPoolLayer>(*this);
  }
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(double rate, std::size_t index) : rate_(rate), index_(index) {}

  LayerKind kind() const override { return LayerKind::kDropout; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts,
                 LayerCache& cache) override {
    if (opts.mode == Mode::kEval || rate_ == 0.0) {
      return x;
    }
    RngStream rng = RngStream::child(opts.dropout_seed,
                                     site::kDropoutBase + index_, opts.step);
    const double keep_scale = 1.0 / (1.0 - rate_);
    Tensor mask(x.shape());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng.uniform() >= rate_ ? keep_scale : 0.0;
      out[i] = x[i] * mask[i];
    }
    cache.aux = std::move(mask);
    return out;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor>) const override {
    if (cache.aux.empty()) return grad_out;
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= cache.aux[i];
    return g;
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<DropoutLayer>(*this);
  }

 private:
  double rate_;
  std::size_t index_;
};

class FlattenLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kFlatten; }

  Tensor forward(const Tensor& x, const ForwardOptions&, LayerCache&) override {
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache,
                  std::span<Tensor>) const override {
    return grad_out.reshaped(cache.input.shape());
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<FlattenLayer>(*this);
  }
};

class GaussianNoiseLayer final : public Layer {
 public:
  GaussianNoiseLayer(const LayerSpec& spec, std::size_t site)
      : sigma_(spec.sigma), seed_(spec.seed), site_(site) {}

  LayerKind kind() const override { return LayerKind::kGaussianNoise; }

  Tensor forward(const Tensor& x, const ForwardOptions& opts, LayerCache&) override {
    if (!opts.hidden_sigma) return x;
    const double sigma = sigma_.value_or(*opts.hidden_sigma);
    RngStream rng =
        RngStream::child(seed_.value_or(opts.noise_seed), site_, opts.step);
    return gaussian_layer_forward(x, sigma, opts.mode, rng);
  }

  Tensor backward(const Tensor& grad_out, const LayerCache&,
                  std::span<Tensor>) const override {
    return gaussian_layer_backward(grad_out);
  }

  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GaussianNoiseLayer>(*this);
  }

 private:
  std::optional<double> sigma_;
  std::optional<std::uint64_t> seed_;
  std::size_t site_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const ModelSpec& spec, std::size_t index,
                                  const Shape& input_shape,
                                  std::uint64_t model_seed) {
  const LayerSpec& l = spec.layers.at(index);
  // Init and dropout streams are keyed by position among the non-noise
  // layers, so adding or removing noise layers leaves them unchanged.
  std::size_t noise_before = 0;
  for (std::size_t i = 0; i < index; ++i) {
    if (spec.layers[i].kind == LayerKind::kGaussianNoise) ++noise_before;
  }
  const std::size_t position = index - noise_before;
  const std::uint64_t init_seed = derive_seed(model_seed, position);
  switch (l.kind) {
    case LayerKind::kConv2D:
      return std::make_unique<Conv2DLayer>(input_shape, l, init_seed);
    case LayerKind::kDense:
      return std::make_unique<DenseLayer>(input_shape, l, init_seed);
    case LayerKind::kBatchNorm:
      return std::make_unique<BatchNormLayer>(input_shape.back(), spec.bn_epsilon,
                                              spec.bn_momentum);
    case LayerKind::kMaxPool2D:
      return std::make_unique<MaxPoolLayer>();
    case LayerKind::kDropout:
      return std::make_unique<DropoutLayer>(l.rate, position);
    case LayerKind::kFlatten:
      return std::make_unique<FlattenLayer>();
    case LayerKind::kGaussianNoise:
      return std::make_unique<GaussianNoiseLayer>(l, noise_before);
  }
  throw Error("unsupported layer kind");
}

}  // namespace noisefed
