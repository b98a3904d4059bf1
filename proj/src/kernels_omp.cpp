#include <algorithm>

#include "noisefed/kernels.hpp"

namespace noisefed::kernels::parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

}  // namespace

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out) {
  const Index ci_n = d.in_channels, co_n = d.out_channels;
  const Index h = d.height, w_n = d.width;
  const Index rows = static_cast<Index>(d.batch) * h;
  const std::size_t work = d.batch * d.height * d.width * 9 * ci_n * co_n;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const Index n = r / h, y = r % h;
    for (Index x = 0; x < w_n; ++x) {
      double* o = &out[((n * h + y) * w_n + x) * co_n];
      for (Index co = 0; co < co_n; ++co) o[co] = bias[co];
      for (Index ky = 0; ky < 3; ++ky) {
        const Index iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index ix = x + kx - 1;
          if (ix < 0 || ix >= w_n) continue;
          const double* a = &in[((n * h + iy) * w_n + ix) * ci_n];
          const double* w = &weights[(ky * 3 + kx) * ci_n * co_n];
          for (Index ci = 0; ci < ci_n; ++ci) {
            const double av = a[ci];
            const double* wr = w + ci * co_n;
            for (Index co = 0; co < co_n; ++co) o[co] += av * wr[co];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> grad_out,
                           std::span<const double> weights,
                           std::span<double> grad_in) {
  const Index ci_n = d.in_channels, co_n = d.out_channels;
  const Index h = d.height, w_n = d.width;
  const Index rows = static_cast<Index>(d.batch) * h;
  const std::size_t work = d.batch * d.height * d.width * 9 * ci_n * co_n;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const Index n = r / h, y = r % h;
    for (Index x = 0; x < w_n; ++x) {
      double* gi = &grad_in[((n * h + y) * w_n + x) * ci_n];
      std::fill(gi, gi + ci_n, 0.0);
      for (Index ky = 0; ky < 3; ++ky) {
        const Index oy = y + 1 - ky;
        if (oy < 0 || oy >= h) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index ox = x + 1 - kx;
          if (ox < 0 || ox >= w_n) continue;
          const double* g = &grad_out[((n * h + oy) * w_n + ox) * co_n];
          const double* w = &weights[(ky * 3 + kx) * ci_n * co_n];
          for (Index ci = 0; ci < ci_n; ++ci) {
            const double* wr = w + ci * co_n;
            double acc = 0.0;
            for (Index co = 0; co < co_n; ++co) acc += g[co] * wr[co];
            gi[ci] += acc;
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
  const Index ci_n = d.in_channels, co_n = d.out_channels;
  const Index h = d.height, w_n = d.width, batch = d.batch;
  const std::size_t work = d.batch * d.height * d.width * 9 * ci_n * co_n;
  // One task per (ky, kx, c_in) weight row; each row sums over (n, y, x) in
  // ascending order, exactly as the serial loop nest does.
  const Index taps = 9 * ci_n;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index t = 0; t < taps; ++t) {
    const Index k = t / ci_n, ci = t % ci_n;
    const Index ky = k / 3, kx = k % 3;
    double* gw = &grad_weights[t * co_n];
    std::fill(gw, gw + co_n, 0.0);
    for (Index n = 0; n < batch; ++n) {
      for (Index y = 0; y < h; ++y) {
        const Index iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (Index x = 0; x < w_n; ++x) {
          const Index ix = x + kx - 1;
          if (ix < 0 || ix >= w_n) continue;
          const double a = in[((n * h + iy) * w_n + ix) * ci_n + ci];
          const double* g = &grad_out[((n * h + y) * w_n + x) * co_n];
          for (Index co = 0; co < co_n; ++co) gw[co] += a * g[co];
        }
      }
    }
  }
  const Index pixels = batch * h * w_n;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index co = 0; co < co_n; ++co) {
    double acc = 0.0;
    for (Index p = 0; p < pixels; ++p) acc += grad_out[p * co_n + co];
    grad_bias[co] = acc;
  }
}

void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weights,
                   std::span<const double> bias, std::span<double> out) {
  const Index batch = d.batch, ni = d.inputs, no = d.outputs;
  const std::size_t work = d.batch * d.inputs * d.outputs;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index n = 0; n < batch; ++n) {
    double* o = &out[n * no];
    for (Index j = 0; j < no; ++j) o[j] = bias[j];
    for (Index i = 0; i < ni; ++i) {
      const double a = in[n * ni + i];
      const double* wr = &weights[i * no];
      for (Index j = 0; j < no; ++j) o[j] += a * wr[j];
    }
  }
}

void dense_backward_input(const DenseDims& d, std::span<const double> grad_out,
                          std::span<const double> weights,
                          std::span<double> grad_in) {
  const Index batch = d.batch, ni = d.inputs, no = d.outputs;
  const std::size_t work = d.batch * d.inputs * d.outputs;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index n = 0; n < batch; ++n) {
    const double* g = &grad_out[n * no];
    for (Index i = 0; i < ni; ++i) {
      const double* wr = &weights[i * no];
      double acc = 0.0;
      for (Index j = 0; j < no; ++j) acc += g[j] * wr[j];
      grad_in[n * ni + i] = acc;
    }
  }
}

void dense_backward_params(const DenseDims& d, std::span<const double> in,
                           std::span<const double> grad_out,
                           std::span<double> grad_weights,
                           std::span<double> grad_bias) {
  const Index batch = d.batch, ni = d.inputs, no = d.outputs;
  const std::size_t work = d.batch * d.inputs * d.outputs;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index i = 0; i < ni; ++i) {
    double* gw = &grad_weights[i * no];
    std::fill(gw, gw + no, 0.0);
    for (Index n = 0; n < batch; ++n) {
      const double a = in[n * ni + i];
      const double* g = &grad_out[n * no];
      for (Index j = 0; j < no; ++j) gw[j] += a * g[j];
    }
  }
  for (Index j = 0; j < no; ++j) {
    double acc = 0.0;
    for (Index n = 0; n < batch; ++n) acc += grad_out[n * no + j];
    grad_bias[j] = acc;
  }
}

void maxpool_forward(const PoolDims& d, std::span<const double> in,
                     std::span<double> out, std::span<std::uint32_t> argmax) {
  const Index oh = d.height / 2, ow = d.width / 2, c_n = d.channels;
  const Index h = d.height, w_n = d.width;
  const Index rows = static_cast<Index>(d.batch) * oh;
  const std::size_t work = d.batch * d.height * d.width * d.channels;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) {
    const Index n = r / oh, y = r % oh;
    for (Index x = 0; x < ow; ++x) {
      for (Index c = 0; c < c_n; ++c) {
        Index best = ((n * h + 2 * y) * w_n + 2 * x) * c_n + c;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = ((n * h + 2 * y + dy) * w_n + 2 * x + dx) * c_n + c;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const Index o = ((n * oh + y) * ow + x) * c_n + c;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const double> grad_out,
                      std::span<const std::uint32_t> argmax,
                      std::span<double> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  // Windows do not overlap, so every input receives at most one gradient.
  const Index outputs = grad_out.size();
  const std::size_t work = d.batch * d.height * d.width * d.channels;
#pragma omp parallel for schedule(static) if (work > kMinParallelWork)
  for (Index o = 0; o < outputs; ++o) grad_in[argmax[o]] = grad_out[o];
}

}  // namespace noisefed::kernels::parallel
