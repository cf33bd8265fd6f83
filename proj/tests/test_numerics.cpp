#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "eqloss/numerics.hpp"

using namespace eqloss;

namespace {
constexpr double zeta2 = std::numbers::pi * std::numbers::pi / 6.0;
}

TEST(Spence, Endpoints) {
    EXPECT_EQ(spence(0.0), 0.0);
    EXPECT_NEAR(spence(1.0), zeta2, 1e-15);
}

TEST(Spence, MatchesHighPrecisionValues) {
    // mpmath polylog(2, k/10) at 30 digits
    const double ref[] = {0.10261779109939113111, 0.21100377543970477261, 0.32612951007547606953,
                          0.44928297447128166446, 0.5822405264650125059,  0.72758630771633338951,
                          0.8893776242860387386,  1.0747946000082483594,  1.2997147230049587252};
    for (int k = 1; k <= 9; ++k) EXPECT_NEAR(spence(k / 10.0), ref[k - 1], 1e-12) << k;
}

TEST(Spence, ReflectionIdentity) {
    for (int k = 1; k <= 9; ++k) {
        const double x = k / 10.0;
        EXPECT_NEAR(spence(x) + spence(1 - x), zeta2 - std::log(x) * std::log(1 - x), 1e-10);
    }
}

TEST(Spence, RejectsOutsideUnitInterval) {
    EXPECT_THROW(spence(-0.1), NumericsError);
    EXPECT_THROW(spence(1.5), NumericsError);
}

TEST(Quad, ConstantAndOdd) {
    EXPECT_NEAR(quad([](double) { return 1.0; }, {0, 1}), 1.0, 1e-14);
    EXPECT_NEAR(quad([](double u) { return u; }, {-1, 1}), 0.0, 1e-14);
}

TEST(Quad, DefiningIntegralOfSpence) {
    const double v = quad([](double u) { return -std::log1p(-u) / u; }, {0.0, 0.5});
    EXPECT_NEAR(v, spence(0.5), 1e-11);
}

TEST(Quad, AgreesWithGaussKronrod) {
    auto f = [](double u) { return std::exp(-u * u) * std::cos(3 * u); };
    const double ref = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, -2.0, 3.0, 15, 1e-14);
    EXPECT_NEAR(quad(f, {-2.0, 3.0}), ref, 1e-11);
}

TEST(Quad, Linearity) {
    auto f = [](double u) { return std::sin(u); };
    auto g = [](double u) { return u * u * u; };
    const Interval iv{0.2, 2.3};
    const double lhs = quad([&](double u) { return 2.5 * f(u) - 0.7 * g(u); }, iv);
    EXPECT_NEAR(lhs, 2.5 * quad(f, iv) - 0.7 * quad(g, iv), 1e-10);
}

TEST(Quad, IntegrableEndpointSingularity) {
    // int_0^1 log(u) du = -1
    EXPECT_NEAR(quad([](double u) { return std::log(u); }, {0.0, 1.0}, {1e-12, 0, 1 << 22}), -1.0, 1e-6);
}

TEST(Quad, BudgetExhaustionThrows) {
    EXPECT_THROW(quad([](double u) { return std::sin(1.0 / (u + 1e-9)); }, {0.0, 1.0}, {1e-15, 0, 10}),
                 NumericsError);
}

TEST(QuadPath, OrientationAndBreakpoints) {
    const std::vector<double> br{0.0};
    auto f = [](double u) { return std::abs(u); };
    EXPECT_NEAR(quad_path(f, -1.0, 2.0, br), 2.5, 1e-13);
    EXPECT_NEAR(quad_path(f, 2.0, -1.0, br), -2.5, 1e-13);
    EXPECT_EQ(quad_path(f, 0.3, 0.3, br), 0.0);
}

TEST(Minimize1d, Quadratic) {
    const auto m = minimize_1d([](double y) { return (y - 1) * (y - 1); }, {-2, 2});
    EXPECT_NEAR(m.arg, 1.0, 1e-8);
    EXPECT_NEAR(m.value, 0.0, 1e-15);
}

TEST(Minimize1d, LogisticConditionalRisk) {
    auto f = [](double y) { return 0.7 * std::log1p(std::exp(-y)) + 0.3 * std::log1p(std::exp(y)); };
    const auto m = minimize_1d(f, {-10, 10});
    EXPECT_NEAR(m.arg, 0.84729786038720361371, 1e-7);
}

TEST(Minimize1d, AbsoluteValue) {
    const auto m = minimize_1d([](double y) { return std::abs(y); }, {-1, 1});
    EXPECT_NEAR(m.arg, 0.0, 1e-9);
    EXPECT_NEAR(m.value, 0.0, 1e-9);
}

TEST(Minimize1d, MultimodalPicksBestBasin) {
    // two basins; the deeper one is narrow
    auto f = [](double y) { return std::min((y + 1) * (y + 1), 50 * (y - 2) * (y - 2) - 0.5); };
    const auto m = minimize_1d(f, {-3, 3});
    EXPECT_NEAR(m.arg, 2.0, 1e-7);
}

TEST(Minimize1d, BoundaryMinimum) {
    const auto m = minimize_1d([](double y) { return y; }, {0.5, 3});
    EXPECT_NEAR(m.arg, 0.5, 1e-12);
}

TEST(Envelope, ConvexInputUnchanged) {
    const auto z = linspace(0, 1, 101);
    std::vector<double> v;
    for (double x : z) v.push_back(x * x);
    const auto env = lower_convex_envelope(z, v);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(env(z[i]), v[i], 1e-15);
}

TEST(Envelope, ConcaveKinkBecomesChord) {
    const auto z = linspace(0, 1, 101);
    std::vector<double> v;
    for (double x : z) v.push_back(std::min(x, 0.25));
    const auto env = lower_convex_envelope(z, v);
    for (double x : z) EXPECT_NEAR(env(x), 0.25 * x, 1e-15);
    EXPECT_EQ(env.knots().size(), 2u);
}

TEST(Envelope, ConstantInput) {
    const auto z = linspace(0, 1, 11);
    const std::vector<double> v(11, 0.3);
    const auto env = lower_convex_envelope(z, v);
    for (double x : z) EXPECT_DOUBLE_EQ(env(x), 0.3);
}

TEST(Envelope, ConvexAndBelowInputOnRandomData) {
    const auto z = linspace(0, 1, 200);
    std::vector<double> v;
    for (std::size_t i = 0; i < z.size(); ++i) v.push_back(std::sin(17.0 * z[i]) + 0.3 * std::cos(41.0 * z[i] * z[i]));
    const auto env = lower_convex_envelope(z, v);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_LE(env(z[i]), v[i] + 1e-12);
    const auto& k = env.knots();
    const auto& val = env.values();
    for (std::size_t i = 2; i < k.size(); ++i) {
        const double s0 = (val[i - 1] - val[i - 2]) / (k[i - 1] - k[i - 2]);
        const double s1 = (val[i] - val[i - 1]) / (k[i] - k[i - 1]);
        EXPECT_LE(s0, s1 + 1e-12);
    }
}

TEST(Envelope, Errors) {
    const std::vector<double> z{0, 1}, v{0, 1};
    EXPECT_THROW(lower_convex_envelope(z, v), NumericsError);
    const std::vector<double> z3{0, 0.5, 0.4}, v3{0, 1, 2};
    EXPECT_THROW(lower_convex_envelope(z3, v3), NumericsError);
}

TEST(FiniteDiff, SimpleFunctions) {
    const std::vector<double> x{1, 2};
    auto g = finite_diff_grad([](std::span<const double> v) { return 0.5 * (v[0] * v[0] + v[1] * v[1]); }, x, 1e-5);
    EXPECT_NEAR(g[0], 1.0, 1e-8);
    EXPECT_NEAR(g[1], 2.0, 1e-8);
    const std::vector<double> y{3, 4};
    auto g2 = finite_diff_grad([](std::span<const double> v) { return v[0] * v[1]; }, y, 1e-5);
    EXPECT_NEAR(g2[0], 4.0, 1e-8);
    EXPECT_NEAR(g2[1], 3.0, 1e-8);
    EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, x, 0.0), NumericsError);
}

TEST(InvertMonotone, Square) {
    EXPECT_NEAR(invert_monotone([](double z) { return z * z; }, 0.25, {0, 1}), 0.5, 1e-12);
}

TEST(InvertMonotone, ScaledSquare) {
    const double z = invert_monotone([](double t) { return std::numbers::ln2 * t * t; }, 1e-4, {0, 1});
    EXPECT_NEAR(z, 0.012011224087864497949, 1e-9);
}

TEST(InvertMonotone, RoundTripAndRange) {
    auto f = [](double z) { return std::expm1(z) + z * z * z; };
    for (double z : {0.0, 0.1, 0.37, 0.9, 1.0}) {
        const double back = invert_monotone(f, f(z), {0, 1});
        EXPECT_NEAR(f(back), f(z), 1e-12);
    }
    EXPECT_THROW(invert_monotone(f, 10.0, {0, 1}), NumericsError);
}

TEST(IntervalAndTolerance, Validation) {
    EXPECT_THROW((Interval{1, 0}).validate(), NumericsError);
    EXPECT_THROW((Interval{0, INFINITY}).validate(), NumericsError);
    EXPECT_THROW((Tolerance{0, 0, 1}).validate(), NumericsError);
    EXPECT_THROW((Tolerance{1e-3, -1, 1}).validate(), NumericsError);
    EXPECT_THROW((Tolerance{1e-3, 0, 0}).validate(), NumericsError);
}
