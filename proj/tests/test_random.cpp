#include <gtest/gtest.h>

#include <set>

#include "branchdiff/random.hpp"

using namespace branchdiff;

// Known-answer vectors of the reference Philox4x32-10 implementation.
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, EngineIsReproducible) {
  PhiloxEngine a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(Philox, StreamsDiffer) {
  PhiloxEngine a(42, 1), b(42, 2), c(43, 1);
  const auto x = a();
  EXPECT_NE(x, b());
  EXPECT_NE(x, c());
}

TEST(Keys, CombineIsOrderSensitive) {
  EXPECT_NE(combine_keys(1, 2), combine_keys(2, 1));
  EXPECT_EQ(combine_keys(5, 9), combine_keys(5, 9));
}

TEST(Keys, ChildKeysAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t parent = 0; parent < 64; ++parent) {
    for (std::uint64_t child = 1; child <= 64; ++child) seen.insert(combine_keys(parent, child));
  }
  EXPECT_EQ(seen.size(), 64u * 64u);
}

TEST(RandomStream, UniformInOpenInterval) {
  RandomStream rng(3, StreamPurpose::auxiliary);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RandomStream, NormalMoments) {
  RandomStream rng(11, StreamPurpose::diffusion);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(RandomStream, PurposesAreIndependentStreams) {
  RandomStream a(99, StreamPurpose::skeleton), b(99, StreamPurpose::diffusion);
  EXPECT_NE(a.uniform(), b.uniform());
}
