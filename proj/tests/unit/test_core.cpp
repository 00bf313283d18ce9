#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "headlamp/core.hpp"

using namespace headlamp;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformInUnitInterval) {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(Rng, BelowCoversRangeWithoutBias) {
    Rng r(9);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[r.below(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
    EXPECT_THROW(r.below(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
    Rng r(3);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    r.shuffle(v);
    EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
}

TEST(DeriveSeed, DependsOnEveryTag) {
    const auto base = derive_seed(1, {2, 3});
    EXPECT_EQ(base, derive_seed(1, {2, 3}));
    EXPECT_NE(base, derive_seed(1, {3, 2}));
    EXPECT_NE(base, derive_seed(2, {2, 3}));
    EXPECT_NE(base, derive_seed(1, {2, 3, 0}));
}

TEST(Argmax, LowestIndexWinsTies) {
    const std::vector<double> v{0.1, 0.4, 0.4, 0.1};
    EXPECT_EQ(argmax(v), 1u);
    EXPECT_THROW(argmax(std::vector<double>{}), std::invalid_argument);
}

TEST(ModelShape, FlatIndexRoundTrip) {
    ModelShape s{3, 5, 8, 10};
    for (int f = 0; f < s.total_heads(); ++f) EXPECT_EQ(s.flat(s.head_at(f)), f);
    EXPECT_TRUE(s.contains({2, 4}));
    EXPECT_FALSE(s.contains({3, 0}));
    EXPECT_EQ((HeadId{1, 2}).str(), "L1-H2");
}
