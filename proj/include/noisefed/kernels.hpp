#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// Compute kernels for the layers in nn. Every kernel has a serial reference
// and an OpenMP version. Both accumulate each output element in the same
// order, so their results are bit-identical; tests assert exactly that.
//
// Layouts: activations NHWC, conv weights [ky][kx][c_in][c_out] (3x3, stride
// 1, zero "same" padding), dense weights [in][out].

namespace noisefed::kernels {

struct ConvDims {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

struct DenseDims {
  std::size_t batch = 0;
  std::size_t inputs = 0;
  std::size_t outputs = 0;
};

/// 2x2 window, stride 2; odd trailing rows/columns are dropped.
struct PoolDims {
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

inline constexpr std::size_t kConvKernel = 3;

namespace serial {

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weights,
                           std::span<double> grad_in);
void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out,
                            std::span<double> grad_weights,
                            std::span<double> grad_bias);
void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weights,
                   std::span<const double> bias, std::span<double> out);
void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weights,
                          std::span<double> grad_in);
void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out,
                           std::span<double> grad_weights,
                           std::span<double> grad_bias);
void maxpool_forward(const PoolDims& d, std::span<const double> in,
                     std::span<double> out, std::span<std::uint32_t> argmax);
void maxpool_backward(const PoolDims& d, std::span<const double> grad_out,
                      std::span<const std::uint32_t> argmax,
                      std::span<double> grad_in);

}  // namespace serial

// OpenMP versions; fall back to one thread below a small work threshold.
namespace parallel {

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weights,
                           std::span<double> grad_in);
void conv2d_backward_params(const ConvDims& d, std::span<const double> in,
                            std::span<const double> grad_out,
                            std::span<double> grad_weights,
                            std::span<double> grad_bias);
void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weights,
                   std::span<const double> bias, std::span<double> out);
void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weights,
                          std::span<double> grad_in);
void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out,
                           std::span<double> grad_weights,
                           std::span<double> grad_bias);
void maxpool_forward(const PoolDims& d, std::span<const double> in,
                     std::span<double> out, std::span<std::uint32_t> argmax);
void maxpool_backward(const PoolDims& d, std::span<const double> grad_out,
                      std::span<const std::uint32_t> argmax,
                      std::span<double> grad_in);

}  // namespace parallel

}  // namespace noisefed::kernels
