#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "linalg.hpp"
#include "numerics.hpp"

namespace eqloss {

enum class Task { binary, multiclass, regression };

enum class LossKind {
    cross_entropy,
    squared_margin,
    logistic,
    hinge,
    exponential,
    squared_error,
    multiclass_cross_entropy,
    multiclass_margin,
};

enum class ModelKind { linear_margin, probabilistic, multiclass, regressor };

struct LossSpec {
    LossKind kind = LossKind::squared_margin;
    std::size_t classes = 2;
};

inline constexpr double q_epsilon = 1e-12;

inline constexpr std::string_view to_string(Task t) {
    switch (t) {
        case Task::binary: return "binary";
        case Task::multiclass: return "multiclass";
        case Task::regression: return "regression";
    }
    return "?";
}

inline constexpr std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return "cross_entropy";
        case LossKind::squared_margin: return "squared_margin";
        case LossKind::logistic: return "logistic";
        case LossKind::hinge: return "hinge";
        case LossKind::exponential: return "exponential";
        case LossKind::squared_error: return "squared_error";
        case LossKind::multiclass_cross_entropy: return "multiclass_cross_entropy";
        case LossKind::multiclass_margin: return "multiclass_margin";
    }
    return "?";
}

inline std::optional<Task> task_from_string(std::string_view s) {
    for (Task t : {Task::binary, Task::multiclass, Task::regression})
        if (to_string(t) == s) return t;
    return std::nullopt;
}

inline std::optional<LossKind> loss_kind_from_string(std::string_view s) {
    if (s == "margin") return LossKind::hinge;
    for (int i = 0; i <= static_cast<int>(LossKind::multiclass_margin); ++i) {
        const auto k = static_cast<LossKind>(i);
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

inline constexpr Task task_of(LossKind k) {
    switch (k) {
        case LossKind::squared_error: return Task::regression;
        case LossKind::multiclass_cross_entropy:
        case LossKind::multiclass_margin: return Task::multiclass;
        default: return Task::binary;
    }
}

inline constexpr ModelKind model_of(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return ModelKind::probabilistic;
        case LossKind::squared_error: return ModelKind::regressor;
        case LossKind::multiclass_cross_entropy:
        case LossKind::multiclass_margin: return ModelKind::multiclass;
        default: return ModelKind::linear_margin;
    }
}

inline std::size_t param_dim(const LossSpec& spec, std::size_t features) {
    return task_of(spec.kind) == Task::multiclass ? features * spec.classes : features;
}

inline void check_label(const LossSpec& spec, double y) {
    switch (task_of(spec.kind)) {
        case Task::binary:
            if (y != 1.0 && y != -1.0)
                throw std::invalid_argument("binary loss needs a label in {-1,+1}, got " + std::to_string(y));
            return;
        case Task::multiclass:
            if (y != std::floor(y) || y < 1.0 || y > static_cast<double>(spec.classes))
                throw std::invalid_argument("class label outside 1..K: " + std::to_string(y));
            return;
        case Task::regression:
            if (!std::isfinite(y)) throw std::invalid_argument("regression target not finite");
            return;
    }
}

inline void check_theta(const LossSpec& spec, std::span<const double> theta, std::span<const double> x) {
    if (theta.size() != param_dim(spec, x.size()))
        throw std::invalid_argument("parameter dimension " + std::to_string(theta.size()) +
                                    " does not match features " + std::to_string(x.size()));
}

struct Prediction {
    ModelKind kind = ModelKind::linear_margin;
    double value = 0.0;  // margin, q, or regression output
    Vec scores;          // multiclass only
};

inline double clamped_q(double z) { return std::clamp(sigmoid(z), q_epsilon, 1.0 - q_epsilon); }

inline Vec class_scores(std::span<const double> theta, std::span<const double> x, std::size_t classes) {
    require_same_size(theta.size(), x.size() * classes, "class_scores");
    Vec s(classes);
    for (std::size_t k = 0; k < classes; ++k) s[k] = dot(theta.subspan(k * x.size(), x.size()), x);
    return s;
}

inline Prediction predict(ModelKind kind, std::span<const double> theta, std::span<const double> x,
                          std::size_t classes = 2) {
    switch (kind) {
        case ModelKind::probabilistic: return {kind, clamped_q(dot(theta, x)), {}};
        case ModelKind::multiclass: return {kind, 0.0, class_scores(theta, x, classes)};
        default: return {kind, dot(theta, x), {}};
    }
}

// Binary margin losses as functions of s = y * theta'x.
inline double margin_loss(LossKind k, double s) {
    switch (k) {
        case LossKind::squared_margin: {
            const double h = std::max(0.0, 1.0 - s);
            return h * h;
        }
        case LossKind::logistic: return softplus(-s);
        case LossKind::hinge: return std::max(0.0, 1.0 - s);
        case LossKind::exponential: return std::exp(-s);
        default: throw std::invalid_argument("not a margin loss: " + std::string(to_string(k)));
    }
}

// d l / d s; hinge uses subgradient 0 at the kink.
inline double margin_loss_derivative(LossKind k, double s) {
    switch (k) {
        case LossKind::squared_margin: return -2.0 * std::max(0.0, 1.0 - s);
        case LossKind::logistic: return -sigmoid(-s);
        case LossKind::hinge: return s < 1.0 ? -1.0 : 0.0;
        case LossKind::exponential: return -std::exp(-s);
        default: throw std::invalid_argument("not a margin loss: " + std::string(to_string(k)));
    }
}

// Cross-entropy of the clamped logistic model as a function of z = theta'x.
inline double cross_entropy_of_logit(double z, double y) {
    constexpr double cap = 27.631021115928547;  // -log(q_epsilon)
    return std::min(y > 0.0 ? softplus(-z) : softplus(z), cap);
}

namespace detail {

inline std::size_t runner_up(const Vec& s, std::size_t y) {
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t k = 0; k < s.size(); ++k)
        if (k != y && s[k] > s[best]) best = k;
    return best;
}

inline double log_sum_exp(const Vec& s) {
    const double m = *std::max_element(s.begin(), s.end());
    double acc = 0.0;
    for (double v : s) acc += std::exp(v - m);
    return m + std::log(acc);
}

}  // namespace detail

inline double loss(const LossSpec& spec, std::span<const double> theta, std::span<const double> x, double y) {
    check_label(spec, y);
    check_theta(spec, theta, x);
    switch (spec.kind) {
        case LossKind::cross_entropy: return cross_entropy_of_logit(dot(theta, x), y);
        case LossKind::squared_error: {
            const double r = dot(theta, x) - y;
            return r * r;
        }
        case LossKind::multiclass_cross_entropy: {
            const Vec s = class_scores(theta, x, spec.classes);
            return detail::log_sum_exp(s) - s[static_cast<std::size_t>(y) - 1];
        }
        case LossKind::multiclass_margin: {
            const Vec s = class_scores(theta, x, spec.classes);
            const auto yi = static_cast<std::size_t>(y) - 1;
            return std::max(0.0, 1.0 + s[detail::runner_up(s, yi)] - s[yi]);
        }
        default: return margin_loss(spec.kind, y * dot(theta, x));
    }
}

inline void loss_grad(const LossSpec& spec, std::span<const double> theta, std::span<const double> x, double y,
                      std::span<double> out) {
    check_label(spec, y);
    check_theta(spec, theta, x);
    require_same_size(out.size(), theta.size(), "loss_grad");
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t d = x.size();
    switch (spec.kind) {
        case LossKind::cross_entropy: {
            const double coeff = clamped_q(dot(theta, x)) - (y > 0.0 ? 1.0 : 0.0);
            axpy(coeff, x, out);
            return;
        }
        case LossKind::squared_error: {
            axpy(2.0 * (dot(theta, x) - y), x, out);
            return;
        }
        case LossKind::multiclass_cross_entropy: {
            const Vec s = class_scores(theta, x, spec.classes);
            const double lse = detail::log_sum_exp(s);
            const auto yi = static_cast<std::size_t>(y) - 1;
            for (std::size_t k = 0; k < spec.classes; ++k) {
                const double coeff = std::exp(s[k] - lse) - (k == yi ? 1.0 : 0.0);
                axpy(coeff, x, out.subspan(k * d, d));
            }
            return;
        }
        case LossKind::multiclass_margin: {
            const Vec s = class_scores(theta, x, spec.classes);
            const auto yi = static_cast<std::size_t>(y) - 1;
            const std::size_t r = detail::runner_up(s, yi);
            if (1.0 + s[r] - s[yi] > 0.0) {
                axpy(1.0, x, out.subspan(r * d, d));
                axpy(-1.0, x, out.subspan(yi * d, d));
            }
            return;
        }
        default: {
            axpy(margin_loss_derivative(spec.kind, y * dot(theta, x)) * y, x, out);
            return;
        }
    }
}

inline Vec loss_grad(const LossSpec& spec, std::span<const double> theta, std::span<const double> x, double y) {
    Vec g(theta.size());
    loss_grad(spec, theta, x, y, g);
    return g;
}

/** Upper bound on the gradient norm over ||theta|| <= m_theta, ||x|| <= m_x, |y| <= m_y. */
inline double gradient_bound(const LossSpec& spec, double m_theta, double m_x, double m_y = 1.0) {
    switch (spec.kind) {
        case LossKind::cross_entropy:
        case LossKind::logistic:
        case LossKind::hinge: return m_x;
        case LossKind::squared_margin: return 2.0 * (1.0 + m_theta * m_x) * m_x;
        case LossKind::exponential: return std::exp(m_theta * m_x) * m_x;
        case LossKind::squared_error: return 2.0 * (m_theta * m_x + m_y) * m_x;
        case LossKind::multiclass_cross_entropy:
        case LossKind::multiclass_margin: return std::sqrt(2.0) * m_x;
    }
    return m_x;
}

inline void project_to_ball(std::span<double> theta, double radius) {
    const double n = norm2(theta);
    if (n > radius && n > 0.0) {
        const double c = radius / n;
        for (double& v : theta) v *= c;
    }
}

enum class KernelKind { linear, polynomial, rbf };

inline constexpr std::string_view to_string(KernelKind k) {
    switch (k) {
        case KernelKind::linear: return "linear";
        case KernelKind::polynomial: return "polynomial";
        case KernelKind::rbf: return "rbf";
    }
    return "?";
}

inline std::optional<KernelKind> kernel_kind_from_string(std::string_view s) {
    for (KernelKind k : {KernelKind::linear, KernelKind::polynomial, KernelKind::rbf})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

struct Kernel {
    KernelKind kind = KernelKind::rbf;
    double degree = 3.0;
    double coef = 1.0;
    double bandwidth = 1.0;

    double operator()(std::span<const double> a, std::span<const double> b) const {
        switch (kind) {
            case KernelKind::linear: return dot(a, b);
            case KernelKind::polynomial: return std::pow(dot(a, b) + coef, degree);
            case KernelKind::rbf: return std::exp(-squared_distance(a, b) / (2.0 * bandwidth * bandwidth));
        }
        return 0.0;
    }
};

inline double median_pairwise_distance(const Matrix& pts) {
    std::vector<double> d;
    d.reserve(pts.rows * (pts.rows - 1) / 2);
    for (std::size_t i = 0; i < pts.rows; ++i)
        for (std::size_t j = i + 1; j < pts.rows; ++j) d.push_back(std::sqrt(squared_distance(pts.row(i), pts.row(j))));
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0.0 ? *mid : 1.0;
}

/** Kernel regressor: prediction sum_i theta_i K(a_i, x) over anchor points a_i,
 *  i.e. a linear model on the feature map x -> (K(a_1,x), ..., K(a_n,x)). */
class KernelFeatureMap {
public:
    KernelFeatureMap(Kernel k, Matrix anchors) : kernel_(k), anchors_(std::move(anchors)) {}

    // RBF bandwidth from the median pairwise anchor distance.
    static KernelFeatureMap with_median_bandwidth(KernelKind kind, Matrix anchors) {
        Kernel k{kind};
        if (kind == KernelKind::rbf) k.bandwidth = median_pairwise_distance(anchors);
        return {k, std::move(anchors)};
    }

    const Kernel& kernel() const { return kernel_; }
    const Matrix& anchors() const { return anchors_; }
    std::size_t dim() const { return anchors_.rows; }

    Vec map(std::span<const double> x) const {
        Vec f(anchors_.rows);
        for (std::size_t i = 0; i < anchors_.rows; ++i) f[i] = kernel_(anchors_.row(i), x);
        return f;
    }

    Matrix map_all(const Matrix& X) const {
        Matrix out(X.rows, anchors_.rows);
        for (std::size_t r = 0; r < X.rows; ++r) {
            const Vec f = map(X.row(r));
            std::copy(f.begin(), f.end(), out.row(r).begin());
        }
        return out;
    }

    double predict(std::span<const double> theta, std::span<const double> x) const { return dot(theta, map(x)); }

private:
    Kernel kernel_;
    Matrix anchors_;
};

}  // namespace eqloss
