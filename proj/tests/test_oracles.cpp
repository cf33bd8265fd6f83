#include <gtest/gtest.h>

#include <cmath>

#include "eqloss/mixture.hpp"
#include "eqloss/oracles.hpp"

using namespace eqloss;

namespace {
const OracleDistribution& mix() {
    static const OracleDistribution d(four_gaussian_mixture());
    return d;
}
}  // namespace

TEST(Mixture, Validation) {
    auto m = four_gaussian_mixture();
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(m.task(), Task::binary);
    m.components[0].weight = 0.3;
    EXPECT_THROW(m.validate(), std::invalid_argument);
    m = four_gaussian_mixture();
    m.components[1].std[0] = 0.0;
    EXPECT_THROW(m.validate(), std::invalid_argument);
    GaussianMixtureSpec mc{{{{0.0}, {1.0}, 0.5, 1}, {{1.0}, {1.0}, 0.5, 3}}};
    EXPECT_THROW(mc.validate(), std::invalid_argument);  // labels 1 and 3 skip 2
}

TEST(Posterior, OriginIsBalanced) {
    // all four centres are equidistant from the origin: p = 0.2 + 0.3
    EXPECT_NEAR(posterior(mix(), Vec{0.0, 0.0}), 0.5, 1e-15);
}

TEST(Posterior, NearCentres) {
    // std 0.5: a neighbouring centre sits at squared distance 8, the opposite one at 16
    const double e16 = std::exp(-16.0), e32 = std::exp(-32.0);
    EXPECT_NEAR(posterior(mix(), Vec{2.0, 0.0}), (0.3 + 0.2 * e32) / (0.3 + 0.2 * e32 + 0.5 * e16), 1e-15);
    EXPECT_NEAR(posterior(mix(), Vec{0.0, -2.0}), 0.5 * e16 / (0.4 + 0.1 * e32 + 0.5 * e16), 1e-20);
    // on the diagonal x = y only (2,0) and (0,2) matter: 0.3 / (0.3 + 0.1)
    EXPECT_NEAR(posterior(mix(), Vec{1.0, 1.0}), 0.75, 1e-6);
}

TEST(Posterior, StableFarAway) {
    const double p = posterior(mix(), Vec{200.0, 0.0});
    EXPECT_TRUE(std::isfinite(p));
    EXPECT_NEAR(p, 1.0, 1e-12);
}

TEST(Draws, LabelFrequencyMatchesPosterior) {
    Rng r(3);
    const Vec x{1.0, 1.0};
    int pos = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) pos += draw_label(mix(), x, r) > 0 ? 1 : 0;
    const double p = posterior(mix(), x);
    EXPECT_NEAR(pos / double(n), p, 4 * std::sqrt(p * (1 - p) / n));
}

TEST(Draws, ComponentWeights) {
    Rng r(4);
    const auto m = four_gaussian_mixture();
    int counts[4] = {};
    const int n = 50000;
    for (int i = 0; i < n; ++i) ++counts[m.draw_component(r)];
    for (int k = 0; k < 4; ++k) {
        const double w = m.components[k].weight;
        EXPECT_NEAR(counts[k] / double(n), w, 4 * std::sqrt(w * (1 - w) / n));
    }
}

TEST(ConditionalLoss, MatchesHandComputation) {
    const Vec x{1.0, 1.0}, theta{0.3, -0.2};
    const LossSpec ce{LossKind::cross_entropy};
    const double p = posterior(mix(), x);
    const double z = 0.1;
    const double expect = p * std::log1p(std::exp(-z)) + (1 - p) * std::log1p(std::exp(z));
    EXPECT_NEAR(conditional_loss(mix(), ce, theta, x), expect, 1e-14);
    EXPECT_THROW(conditional_loss(mix(), {LossKind::squared_error}, theta, x), std::invalid_argument);
}

TEST(ConditionalLoss, RegressionBiasVariance) {
    const OracleDistribution reg(RegressionOracle{{1.0, -0.5}, 0.2, 0.1, 1.0});
    const Vec x{0.4, 0.2}, theta{0.5, 0.5};
    const double bias = 0.3 - (0.4 - 0.1 + 0.2);
    EXPECT_NEAR(conditional_loss(reg, {LossKind::squared_error}, theta, x), bias * bias + 0.01, 1e-15);
    EXPECT_NEAR(bayes_conditional_loss(reg, {LossKind::squared_error}, x), 0.01, 1e-15);
}

TEST(ConditionalLoss, RawKeyDrivesLabelLaw) {
    // the model sees a different input than the point where the label law is read
    const Vec raw{2.0, 0.0}, input{1.0, -1.0}, theta{0.5, 0.0};
    const double l = conditional_loss(mix(), {LossKind::logistic}, theta, input, raw);
    const double p = posterior(mix(), raw);
    EXPECT_LT(1.0 - p, 1e-6);
    EXPECT_NEAR(l, p * std::log1p(std::exp(-0.5)) + (1 - p) * std::log1p(std::exp(0.5)), 1e-14);
    EXPECT_GT(std::abs(l - conditional_loss(mix(), {LossKind::logistic}, theta, input)), 1e-3);
}

TEST(BayesLoss, ClosedForms) {
    const Vec x{1.0, 1.0};
    const double p = 0.75;
    EXPECT_NEAR(bayes_conditional_loss(mix(), {LossKind::logistic}, x), binary_entropy(p), 1e-6);
    EXPECT_NEAR(bayes_conditional_loss(mix(), {LossKind::squared_margin}, x), 4 * p * (1 - p), 1e-5);
    EXPECT_NEAR(bayes_conditional_loss(mix(), {LossKind::hinge}, x), 2 * (1 - p), 1e-5);
    EXPECT_NEAR(bayes_conditional_loss(mix(), {LossKind::exponential}, x), 2 * std::sqrt(p * (1 - p)), 1e-5);
}

TEST(BayesLoss, IsPointwiseInfimum) {
    const Vec x{0.7, -0.4};
    for (LossKind k : {LossKind::logistic, LossKind::squared_margin, LossKind::exponential, LossKind::cross_entropy}) {
        const double b = bayes_conditional_loss(mix(), {k}, x);
        for (double a = -6; a <= 6; a += 0.01) {
            const Vec theta{a / 0.7, 0.0};
            EXPECT_GE(conditional_loss(mix(), {k}, theta, x), b - 1e-12) << to_string(k) << " a=" << a;
        }
    }
}

TEST(BayesExcess, NonNegativeAndZeroOnlyAtOptimum) {
    const Matrix g = grid_2d(-3, 3, 9);
    const auto e = bayes_excess(mix(), {LossKind::cross_entropy}, Vec{0.2, -0.1}, g);
    EXPECT_GT(e.excess_L, 0.0);
    EXPECT_GT(e.excess_Ltilde, 0.0);
    EXPECT_GT(epsilon_star(mix(), {LossKind::cross_entropy}, g), 0.0);
    EXPECT_THROW(bayes_excess(mix(), {LossKind::cross_entropy}, Vec{0, 0}, Matrix()), std::invalid_argument);
}

TEST(Calibrator, EmptyAndNeighbourCount) {
    LossCalibrator cal;
    const LossSpec ce{LossKind::cross_entropy};
    EXPECT_EQ(cal.estimate(ce, Vec{0.0, 0.0}, Vec{0.0, 0.0}), 1.0);
    for (int i = 0; i < 10; ++i) cal.append(Vec{double(i), 0.0}, 1.0);
    EXPECT_EQ(cal.neighbours(), 4u);  // ceil(sqrt(10))
    LossCalibrator fixed(3);
    fixed.append(Vec{0.0, 0.0}, 1.0);
    EXPECT_EQ(fixed.neighbours(), 1u);
}

TEST(Calibrator, AveragesNearestLosses) {
    LossCalibrator cal(2);
    const LossSpec lg{LossKind::logistic};
    cal.append(Vec{0.0}, 1.0);
    cal.append(Vec{0.1}, -1.0);
    cal.append(Vec{5.0}, 1.0);
    const Vec theta{1.0};
    const double expect = 0.5 * (std::log(2.0) + std::log1p(std::exp(0.1)));
    EXPECT_NEAR(cal.estimate(lg, theta, Vec{0.02}), expect, 1e-14);
}

TEST(Calibrator, ConvergesToConditionalLoss) {
    LossCalibrator cal;
    Rng r(17);
    for (int i = 0; i < 20000; ++i) {
        const Vec x = draw_features(mix(), r);
        cal.append(x, draw_label(mix(), x, r));
    }
    const Matrix g = grid_2d(-1.5, 1.5, 5);
    EXPECT_LT(calibration_error(cal, mix(), {LossKind::cross_entropy}, Vec{0.5, -0.5}, g), 0.1);
}
