#include <algorithm>
#include <vector>

#include "noisefed/kernels.hpp"

namespace noisefed::kernels::serial {

namespace {

// Index of the input pixel feeding kernel tap (ky, kx) at output (y, x), or
// false when the tap falls in the zero padding.
bool tap(const ConvDims& d, std::size_t y, std::size_t x, std::size_t ky,
         std::size_t kx, std::size_t& iy, std::size_t& ix) {
  const auto sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
  const auto sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
  if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(d.height) ||
      sx >= static_cast<std::ptrdiff_t>(d.width)) {
    return false;
  }
  iy = static_cast<std::size_t>(sy);
  ix = static_cast<std::size_t>(sx);
  return true;
}

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        double* o = &out[((n * d.height + y) * d.width + x) * co_n];
        for (std::size_t co = 0; co < co_n; ++co) o[co] = bias[co];
        for (std::size_t ky = 0; ky < kConvKernel; ++ky) {
          for (std::size_t kx = 0; kx < kConvKernel; ++kx) {
            std::size_t iy, ix;
            if (!tap(d, y, x, ky, kx, iy, ix)) continue;
            const double* a = &in[((n * d.height + iy) * d.width + ix) * ci_n];
            const double* w = &weights[(ky * kConvKernel + kx) * ci_n * co_n];
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              for (std::size_t co = 0; co < co_n; ++co) {
                o[co] += a[ci] * w[ci * co_n + co];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weights,
                           std::span<double> grad_in) {
  const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  // Visit input pixels; output (oy, ox) uses input (y, x) through tap
  // (ky, kx) when y = oy + ky - 1.
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        double* gi = &grad_in[((n * d.height + y) * d.width + x) * ci_n];
        for (std::size_t ky = 0; ky < kConvKernel; ++ky) {
          for (std::size_t kx = 0; kx < kConvKernel; ++kx) {
            const auto oy = static_cast<std::ptrdiff_t>(y) + 1 -
                            static_cast<std::ptrdiff_t>(ky);
            const auto ox = static_cast<std::ptrdiff_t>(x) + 1 -
                            static_cast<std::ptrdiff_t>(kx);
            if (oy < 0 || ox < 0 || oy >= static_cast<std::ptrdiff_t>(d.height) ||
                ox >= static_cast<std::ptrdiff_t>(d.width)) {
              continue;
            }
            const double* g =
                &grad_out[((n * d.height + oy) * d.width + ox) * co_n];
            const double* w = &weights[(ky * kConvKernel + kx) * ci_n * co_n];
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              double acc = 0.0;
              for (std::size_t co = 0; co < co_n; ++co) {
                acc += g[co] * w[ci * co_n + co];
              }
              gi[ci] += acc;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out,
                            std::span<double> grad_weights,
                            std::span<double> grad_bias) {
  const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
  std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x) {
        const double* g = &grad_out[((n * d.height + y) * d.width + x) * co_n];
        for (std::size_t co = 0; co < co_n; ++co) grad_bias[co] += g[co];
        for (std::size_t ky = 0; ky < kConvKernel; ++ky) {
          for (std::size_t kx = 0; kx < kConvKernel; ++kx) {
            std::size_t iy, ix;
            if (!tap(d, y, x, ky, kx, iy, ix)) continue;
            const double* a = &in[((n * d.height + iy) * d.width + ix) * ci_n];
            double* gw = &grad_weights[(ky * kConvKernel + kx) * ci_n * co_n];
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              for (std::size_t co = 0; co < co_n; ++co) {
                gw[ci * co_n + co] += a[ci] * g[co];
              }
            }
          }
        }
      }
    }
  }
}

void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weights,
                   std::span<const double> bias, std::span<double> out) {
  for (std::size_t n = 0; n < d.batch; ++n) {
    double* o = &out[n * d.outputs];
    for (std::size_t j = 0; j < d.outputs; ++j) o[j] = bias[j];
    for (std::size_t i = 0; i < d.inputs; ++i) {
      const double a = in[n * d.inputs + i];
      for (std::size_t j = 0; j < d.outputs; ++j) {
        o[j] += a * weights[i * d.outputs + j];
      }
    }
  }
}

void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weights,
                          std::span<double> grad_in) {
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t i = 0; i < d.inputs; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d.outputs; ++j) {
        acc += grad_out[n * d.outputs + j] * weights[i * d.outputs + j];
      }
      grad_in[n * d.inputs + i] = acc;
    }
  }
}

void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out,
                           std::span<double> grad_weights,
                           std::span<double> grad_bias) {
  std::fill(grad_weights.begin(), grad_weights.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  for (std::size_t n = 0; n < d.batch; ++n) {
    const double* g = &grad_out[n * d.outputs];
    for (std::size_t j = 0; j < d.outputs; ++j) grad_bias[j] += g[j];
    for (std::size_t i = 0; i < d.inputs; ++i) {
      const double a = in[n * d.inputs + i];
      for (std::size_t j = 0; j < d.outputs; ++j) {
        grad_weights[i * d.outputs + j] += a * g[j];
      }
    }
  }
}

void maxpool_forward(const PoolDims& d, std::span<const double> in,
                     std::span<double> out, std::span<std::uint32_t> argmax) {
  const std::size_t oh = d.height / 2, ow = d.width / 2, c_n = d.channels;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t c = 0; c < c_n; ++c) {
          std::size_t best = ((n * d.height + 2 * y) * d.width + 2 * x) * c_n + c;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx =
                  ((n * d.height + 2 * y + dy) * d.width + 2 * x + dx) * c_n + c;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = ((n * oh + y) * ow + x) * c_n + c;
          out[o] = in[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const double> grad_out,
                      std::span<const std::uint32_t> argmax,
                      std::span<double> grad_in) {
  (void)d;
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    grad_in[argmax[o]] += grad_out[o];
  }
}

}  // namespace noisefed::kernels::serial
