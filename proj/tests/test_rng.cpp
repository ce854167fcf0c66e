#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pgoc/rng.hpp"

namespace {

using pgoc::RngStream;

TEST(RngStream, DeterministicGivenSeed) {
  RngStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_bits(), b.next_bits());
  }
}

TEST(RngStream, SeedsDiffer) {
  RngStream a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i) {
    if (a.next_bits() == b.next_bits()) ++equal;
  }
  EXPECT_EQ(equal, 0);
}

TEST(RngStream, SubstreamIndependentOfParentDraws) {
  RngStream parent(7);
  RngStream child_before = parent.substream(3);
  for (int i = 0; i < 50; ++i) parent.uniform01();
  RngStream child_after = parent.substream(3);
  for (int i = 0; i < 100; ++i) {
    ASSERT_EQ(child_before.next_bits(), child_after.next_bits());
  }
}

TEST(RngStream, ForkTagsGiveDistinctStreams) {
  RngStream parent(7);
  RngStream a = parent.fork("alpha");
  RngStream b = parent.fork("beta");
  EXPECT_NE(a.next_bits(), b.next_bits());
}

TEST(RngStream, UniformInUnitInterval) {
  RngStream rng(3);
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
    mean += u;
  }
  mean /= n;
  // 3 standard errors of the mean of U(0,1).
  EXPECT_NEAR(mean, 0.5, 3.0 / std::sqrt(12.0 * n));
}

TEST(RngStream, NormalMoments) {
  RngStream rng(11);
  const int n = 100000;
  double mean = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  mean /= n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 3.0 / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(var, 1.0, 3.0 * std::sqrt(2.0 / n));
}

TEST(RngStream, GammaMoments) {
  RngStream rng(13);
  const int n = 100000;
  for (double shape : {0.4, 1.0, 2.5, 7.0}) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += rng.gamma(shape);
    mean /= n;
    // Gamma(shape, 1) has mean = shape, var = shape.
    EXPECT_NEAR(mean, shape, 3.0 * std::sqrt(shape / n)) << "shape " << shape;
  }
}

TEST(RngStream, GammaRejectsNonPositiveShape) {
  RngStream rng(1);
  EXPECT_THROW(rng.gamma(0.0), std::invalid_argument);
  EXPECT_THROW(rng.gamma(-1.0), std::invalid_argument);
}

}  // namespace
