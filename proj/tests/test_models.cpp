#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "eqloss/models.hpp"
#include "eqloss/numerics.hpp"

using namespace eqloss;

namespace {

Vec fd_grad(const LossSpec& spec, const Vec& theta, const Vec& x, double y) {
    return finite_diff_grad([&](std::span<const double> t) { return loss(spec, t, x, y); }, theta, 1e-6);
}

}  // namespace

TEST(MarginLosses, Values) {
    EXPECT_DOUBLE_EQ(margin_loss(LossKind::squared_margin, 0.25), 0.5625);
    EXPECT_DOUBLE_EQ(margin_loss(LossKind::squared_margin, 2.0), 0.0);
    EXPECT_DOUBLE_EQ(margin_loss(LossKind::hinge, -1.0), 2.0);
    EXPECT_DOUBLE_EQ(margin_loss(LossKind::hinge, 1.5), 0.0);
    EXPECT_NEAR(margin_loss(LossKind::logistic, 0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(margin_loss(LossKind::exponential, -0.5), std::exp(0.5), 1e-15);
    // large margins stay finite
    EXPECT_NEAR(margin_loss(LossKind::logistic, -800.0), 800.0, 1e-12);
    EXPECT_THROW(margin_loss(LossKind::cross_entropy, 0.0), std::invalid_argument);
}

TEST(MarginLosses, DerivativesMatchFiniteDifferences) {
    for (LossKind k : {LossKind::squared_margin, LossKind::logistic, LossKind::exponential, LossKind::hinge})
        for (double s : {-1.3, -0.2, 0.4, 0.9, 1.7}) {
            const double h = 1e-6;
            const double fd = (margin_loss(k, s + h) - margin_loss(k, s - h)) / (2 * h);
            EXPECT_NEAR(margin_loss_derivative(k, s), fd, 1e-6) << to_string(k) << " s=" << s;
        }
}

TEST(CrossEntropy, ClampedAtExtremeLogits) {
    EXPECT_NEAR(cross_entropy_of_logit(0.0, 1.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(cross_entropy_of_logit(-100.0, 1.0), -std::log(q_epsilon), 1e-9);
    EXPECT_NEAR(cross_entropy_of_logit(100.0, -1.0), -std::log(q_epsilon), 1e-9);
    EXPECT_NEAR(clamped_q(1000.0), 1.0 - q_epsilon, 0.0);
}

TEST(Loss, GradientsMatchFiniteDifferences) {
    const Vec x{0.7, -1.2, 0.3};
    const Vec theta{0.2, 0.1, -0.4};
    for (LossKind k : {LossKind::cross_entropy, LossKind::squared_margin, LossKind::logistic, LossKind::exponential})
        for (double y : {-1.0, 1.0}) {
            const LossSpec spec{k};
            const Vec g = loss_grad(spec, theta, x, y);
            const Vec fd = fd_grad(spec, theta, x, y);
            for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], fd[j], 1e-7) << to_string(k);
        }
    const LossSpec sq{LossKind::squared_error};
    const Vec g = loss_grad(sq, theta, x, 0.8);
    const Vec fd = fd_grad(sq, theta, x, 0.8);
    for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], fd[j], 1e-7);
}

TEST(Loss, MulticlassGradients) {
    const Vec x{0.5, -0.25};
    const Vec theta{0.1, 0.2, -0.3, 0.4, 0.05, -0.15};
    for (LossKind k : {LossKind::multiclass_cross_entropy, LossKind::multiclass_margin})
        for (double y : {1.0, 2.0, 3.0}) {
            const LossSpec spec{k, 3};
            const Vec g = loss_grad(spec, theta, x, y);
            const Vec fd = fd_grad(spec, theta, x, y);
            for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g[j], fd[j], 1e-7) << to_string(k) << " y=" << y;
        }
}

TEST(Loss, MulticlassValues) {
    const Vec x{1.0};
    const Vec theta{1.0, 2.0, 0.0};
    const LossSpec ce{LossKind::multiclass_cross_entropy, 3};
    EXPECT_NEAR(loss(ce, theta, x, 2.0), std::log(std::exp(1.0) + std::exp(2.0) + 1.0) - 2.0, 1e-14);
    const LossSpec mm{LossKind::multiclass_margin, 3};
    EXPECT_DOUBLE_EQ(loss(mm, theta, x, 1.0), 2.0);
    EXPECT_DOUBLE_EQ(loss(mm, theta, x, 2.0), 0.0);
}

TEST(Loss, RejectsBadLabelsAndDimensions) {
    const Vec x{1.0, 2.0}, theta{0.0, 0.0};
    EXPECT_THROW(loss({LossKind::logistic}, theta, x, 0.0), std::invalid_argument);
    EXPECT_THROW(loss({LossKind::cross_entropy}, theta, x, 2.0), std::invalid_argument);
    EXPECT_THROW(loss({LossKind::multiclass_cross_entropy, 3}, Vec(6, 0.0), x, 4.0), std::invalid_argument);
    EXPECT_THROW(loss({LossKind::multiclass_cross_entropy, 3}, Vec(6, 0.0), x, 1.5), std::invalid_argument);
    EXPECT_THROW(loss({LossKind::logistic}, Vec{1.0}, x, 1.0), std::invalid_argument);
    EXPECT_THROW(loss({LossKind::squared_error}, theta, x, NAN), std::invalid_argument);
}

TEST(Loss, GradientBoundHolds) {
    const Vec x{0.6, 0.8};
    for (LossKind k : {LossKind::cross_entropy, LossKind::squared_margin, LossKind::logistic, LossKind::hinge,
                       LossKind::exponential}) {
        const double b = gradient_bound({k}, 2.0, 1.0);
        for (double a = -2.0; a <= 2.0; a += 0.25) {
            const Vec theta{a * 0.6, a * 0.8};
            for (double y : {-1.0, 1.0}) EXPECT_LE(norm2(loss_grad({k}, theta, x, y)), b + 1e-12) << to_string(k);
        }
    }
}

TEST(Names, RoundTrip) {
    for (int i = 0; i <= static_cast<int>(LossKind::multiclass_margin); ++i) {
        const auto k = static_cast<LossKind>(i);
        EXPECT_EQ(loss_kind_from_string(to_string(k)), k);
    }
    EXPECT_EQ(loss_kind_from_string("margin"), LossKind::hinge);
    EXPECT_FALSE(loss_kind_from_string("nope"));
    EXPECT_EQ(task_from_string("regression"), Task::regression);
    EXPECT_EQ(kernel_kind_from_string("rbf"), KernelKind::rbf);
    EXPECT_EQ(param_dim({LossKind::multiclass_margin, 4}, 3), 12u);
}

TEST(Projection, OntoBall) {
    Vec t{3.0, 4.0};
    project_to_ball(t, 1.0);
    EXPECT_NEAR(t[0], 0.6, 1e-15);
    EXPECT_NEAR(t[1], 0.8, 1e-15);
    Vec inside{0.1, 0.1};
    project_to_ball(inside, 1.0);
    EXPECT_EQ(inside[0], 0.1);
}

TEST(Kernel, FeatureMap) {
    Matrix anchors(3, 1);
    anchors.data = {0.0, 1.0, 3.0};
    const auto fm = KernelFeatureMap::with_median_bandwidth(KernelKind::rbf, anchors);
    EXPECT_DOUBLE_EQ(fm.kernel().bandwidth, 2.0);  // distances 1, 2, 3
    const Vec x{1.0};
    const Vec f = fm.map(x);
    EXPECT_NEAR(f[0], std::exp(-1.0 / 8.0), 1e-15);
    EXPECT_DOUBLE_EQ(f[1], 1.0);
    const Vec theta{1.0, 2.0, 3.0};
    EXPECT_NEAR(fm.predict(theta, x), f[0] + 2 * f[1] + 3 * f[2], 1e-15);
    Kernel poly{KernelKind::polynomial, 2.0, 1.0};
    EXPECT_DOUBLE_EQ(poly(Vec{1.0, 2.0}, Vec{3.0, 0.5}), 25.0);
}
