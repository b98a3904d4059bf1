#include <gtest/gtest.h>

#include <set>

#include "noisefed/rng.hpp"
#include "noisefed/tensor.hpp"

using namespace noisefed;

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  for (double v : t.values()) EXPECT_EQ(v, 1.5);
  EXPECT_EQ(shape_to_string({2, 3}), "(2, 3)");
}

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST(Tensor, ReshapeKeepsValues) {
  Tensor t({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor r = t.reshaped({4});
  EXPECT_EQ(r.shape(), Shape{4});
  EXPECT_EQ(r[3], 4.0);
  EXPECT_THROW(t.reshaped({3}), Error);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SameSeedSameStream) {
  RngStream a(11), b(11);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, CopyReplays) {
  RngStream a(3);
  a.normal();
  RngStream b = a;
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivedSeedsDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t site = 0; site < 50; ++site) {
    for (std::uint64_t step = 0; step < 50; ++step) {
      seen.insert(derive_seed(1, site, step));
    }
  }
  EXPECT_EQ(seen.size(), 2500u);
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
}

TEST(Rng, SignIsBalanced) {
  RngStream r(5);
  int sum = 0;
  for (int i = 0; i < 100000; ++i) sum += r.sign();
  EXPECT_LT(std::abs(sum), 1500);
}
