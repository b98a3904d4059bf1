#include <gtest/gtest.h>

#include <omp.h>

#include "noisefed/kernels.hpp"
#include "noisefed/rng.hpp"

using namespace noisefed;
using namespace noisefed::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  RngStream r(seed);
  std::vector<double> v(n);
  for (double& x : v) x = r.normal();
  return v;
}

class KernelParity : public ::testing::TestWithParam<ConvDims> {
 protected:
  void SetUp() override { omp_set_num_threads(4); }
};

}  // namespace

TEST(Conv, OnesKernelCountsNeighbours) {
  ConvDims d{1, 3, 3, 1, 1};
  std::vector<double> in(9, 1.0), w(9, 1.0), b{0.0}, out(9);
  serial::conv2d_forward(d, in, w, b, out);
  EXPECT_EQ(out, (std::vector<double>{4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv, BiasAndChannels) {
  // Centre tap only: out[co] = sum_ci in[ci] * w[ci][co] + b[co].
  ConvDims d{1, 1, 1, 2, 2};
  std::vector<double> in{1.0, 2.0}, w(9 * 4, 0.0), b{0.5, -1.0}, out(2);
  const std::size_t centre = (1 * 3 + 1) * 4;
  w[centre + 0] = 1.0;  // ci0 -> co0
  w[centre + 1] = 2.0;  // ci0 -> co1
  w[centre + 2] = 3.0;  // ci1 -> co0
  w[centre + 3] = 4.0;  // ci1 -> co1
  serial::conv2d_forward(d, in, w, b, out);
  EXPECT_DOUBLE_EQ(out[0], 1.0 + 6.0 + 0.5);
  EXPECT_DOUBLE_EQ(out[1], 2.0 + 8.0 - 1.0);
}

TEST(Dense, MatchesHandProduct) {
  DenseDims d{1, 2, 3};
  std::vector<double> in{1, 2}, w{1, 2, 3, 4, 5, 6}, b{0.1, 0.2, 0.3}, out(3);
  serial::dense_forward(d, in, w, b, out);
  EXPECT_DOUBLE_EQ(out[0], 9.1);
  EXPECT_DOUBLE_EQ(out[1], 12.2);
  EXPECT_DOUBLE_EQ(out[2], 15.3);
}

TEST(MaxPool, PicksWindowMaxAndRoutesGradient) {
  PoolDims d{1, 2, 2, 1};
  std::vector<double> in{1, 5, 3, 2}, out(1), grad_in(4);
  std::vector<std::uint32_t> arg(1);
  serial::maxpool_forward(d, in, out, arg);
  EXPECT_EQ(out[0], 5.0);
  std::vector<double> g{2.0};
  serial::maxpool_backward(d, g, arg, grad_in);
  EXPECT_EQ(grad_in, (std::vector<double>{0, 2, 0, 0}));
}

TEST_P(KernelParity, ConvBitIdentical) {
  const ConvDims d = GetParam();
  const std::size_t n_in = d.batch * d.height * d.width * d.in_channels;
  const std::size_t n_out = d.batch * d.height * d.width * d.out_channels;
  const std::size_t n_w = 9 * d.in_channels * d.out_channels;
  auto in = random_vec(n_in, 1), w = random_vec(n_w, 2), b = random_vec(d.out_channels, 3);
  auto g = random_vec(n_out, 4);

  std::vector<double> o1(n_out), o2(n_out);
  serial::conv2d_forward(d, in, w, b, o1);
  parallel::conv2d_forward(d, in, w, b, o2);
  EXPECT_EQ(o1, o2);

  std::vector<double> gi1(n_in), gi2(n_in);
  serial::conv2d_backward_input(d, g, w, gi1);
  parallel::conv2d_backward_input(d, g, w, gi2);
  EXPECT_EQ(gi1, gi2);

  std::vector<double> gw1(n_w), gw2(n_w), gb1(d.out_channels), gb2(d.out_channels);
  serial::conv2d_backward_params(d, in, g, gw1, gb1);
  parallel::conv2d_backward_params(d, in, g, gw2, gb2);
  EXPECT_EQ(gw1, gw2);
  EXPECT_EQ(gb1, gb2);
}

INSTANTIATE_TEST_SUITE_P(Sizes, KernelParity,
                         ::testing::Values(ConvDims{1, 3, 3, 1, 1}, ConvDims{2, 5, 4, 3, 2},
                                           ConvDims{4, 16, 16, 8, 16},
                                           ConvDims{8, 32, 32, 3, 32}));

TEST(KernelParityDense, BitIdentical) {
  omp_set_num_threads(4);
  for (DenseDims d : {DenseDims{3, 5, 4}, DenseDims{64, 512, 128}}) {
    auto in = random_vec(d.batch * d.inputs, 5), w = random_vec(d.inputs * d.outputs, 6);
    auto b = random_vec(d.outputs, 7), g = random_vec(d.batch * d.outputs, 8);
    std::vector<double> o1(d.batch * d.outputs), o2(o1.size());
    serial::dense_forward(d, in, w, b, o1);
    parallel::dense_forward(d, in, w, b, o2);
    EXPECT_EQ(o1, o2);
    std::vector<double> gi1(in.size()), gi2(in.size());
    serial::dense_backward_input(d, g, w, gi1);
    parallel::dense_backward_input(d, g, w, gi2);
    EXPECT_EQ(gi1, gi2);
    std::vector<double> gw1(w.size()), gw2(w.size()), gb1(d.outputs), gb2(d.outputs);
    serial::dense_backward_params(d, in, g, gw1, gb1);
    parallel::dense_backward_params(d, in, g, gw2, gb2);
    EXPECT_EQ(gw1, gw2);
    EXPECT_EQ(gb1, gb2);
  }
}

TEST(KernelParityPool, BitIdentical) {
  omp_set_num_threads(4);
  PoolDims d{8, 32, 32, 16};
  auto in = random_vec(d.batch * d.height * d.width * d.channels, 9);
  const std::size_t n_out = d.batch * 16 * 16 * d.channels;
  std::vector<double> o1(n_out), o2(n_out);
  std::vector<std::uint32_t> a1(n_out), a2(n_out);
  serial::maxpool_forward(d, in, o1, a1);
  parallel::maxpool_forward(d, in, o2, a2);
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(a1, a2);
  auto g = random_vec(n_out, 10);
  std::vector<double> gi1(in.size()), gi2(in.size());
  serial::maxpool_backward(d, g, a1, gi1);
  parallel::maxpool_backward(d, g, a2, gi2);
  EXPECT_EQ(gi1, gi2);
}
