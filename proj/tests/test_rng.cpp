#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "eqloss/rng.hpp"

using namespace eqloss;

// Known answers cross-checked with numpy.random.Philox (4x64, 10 rounds), which
// increments the counter before producing a block.
TEST(Philox, KnownAnswers) {
    const auto a = philox4x64_10({1, 0, 0, 0}, {0, 0});
    EXPECT_EQ(a[0], 0x02f4ba6408e4d89bULL);
    EXPECT_EQ(a[1], 0x3dd62b0b9ca8c5b2ULL);
    EXPECT_EQ(a[2], 0x1c8667a55d902e79ULL);
    EXPECT_EQ(a[3], 0x907d7a052fd5b4dcULL);
    const auto b = philox4x64_10({2, 2, 3, 4}, {0x0123456789abcdefULL, 0xfedcba9876543210ULL});
    EXPECT_EQ(b[0], 0x88e941281d6fe907ULL);
    EXPECT_EQ(b[1], 0x5823687dd5272472ULL);
    EXPECT_EQ(b[2], 0x246fd1b93a04f59dULL);
    EXPECT_EQ(b[3], 0x5f18e9daf3d87de6ULL);
}

TEST(Rng, DeterministicAndStreamSeparated) {
    Rng a(7, 1), b(7, 1), c(7, 2), d(8, 1);
    for (int i = 0; i < 100; ++i) {
        const auto va = a();
        EXPECT_EQ(va, b());
        EXPECT_NE(va, c());
        EXPECT_NE(va, d());
    }
}

TEST(Rng, SubstreamsDiffer) {
    const Rng base(11, 3);
    auto s1 = base.substream(1), s2 = base.substream(2), s1b = base.substream(1);
    EXPECT_EQ(s1.seed(), 11u);
    EXPECT_NE(s1.stream(), s2.stream());
    EXPECT_EQ(s1(), s1b());
}

TEST(Rng, UniformRanges) {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        const double v = r.uniform_pos();
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, IndexIsUniform) {
    Rng r(9);
    const int n = 7, draws = 70000;
    int counts[7] = {};
    for (int i = 0; i < draws; ++i) ++counts[r.index(n)];
    const double p = 1.0 / n, sd = std::sqrt(draws * p * (1 - p));
    for (int c : counts) EXPECT_NEAR(c, draws * p, 4 * sd);
    EXPECT_THROW(r.index(0), std::invalid_argument);
}

TEST(Rng, NameRecorded) { EXPECT_EQ(Rng::name, "philox4x64-10"); }
