#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "linalg.hpp"
#include "mixture.hpp"
#include "models.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace eqloss {

// Y = w'x + b + N(0, noise_std^2), X uniform on [-box, box]^d.
struct RegressionOracle {
    Vec weights;
    double bias = 0.0;
    double noise_std = 0.1;
    double box = 1.0;

    double f_star(std::span<const double> x) const { return dot(weights, x) + bias; }
};

class OracleDistribution {
public:
    using Law = std::variant<GaussianMixtureSpec, RegressionOracle>;

    explicit OracleDistribution(GaussianMixtureSpec m) : law_(std::move(m)) {
        std::get<GaussianMixtureSpec>(law_).validate();
    }
    explicit OracleDistribution(RegressionOracle r) : law_(std::move(r)) {
        const auto& o = std::get<RegressionOracle>(law_);
        if (!(o.noise_std >= 0.0) || !(o.box > 0.0)) throw std::invalid_argument("regression oracle: bad noise or box");
    }

    const Law& law() const { return law_; }
    const GaussianMixtureSpec* mixture() const { return std::get_if<GaussianMixtureSpec>(&law_); }
    const RegressionOracle* regression() const { return std::get_if<RegressionOracle>(&law_); }

    Task task() const { return mixture() ? mixture()->task() : Task::regression; }
    std::size_t classes() const { return mixture() ? mixture()->classes() : 0; }
    std::size_t dim() const { return mixture() ? mixture()->dim() : regression()->weights.size(); }

private:
    Law law_;
};

namespace detail {

inline const GaussianMixtureSpec& require_mixture(const OracleDistribution& d) {
    if (!d.mixture()) throw std::invalid_argument("oracle: operation needs a Gaussian mixture");
    return *d.mixture();
}

}  // namespace detail

/** P(Y = k | x) for classes in label order: binary returns {P(-1), P(+1)},
 *  multiclass returns P(1), ..., P(K). Computed in log space. */
inline Vec class_posterior(const OracleDistribution& dist, std::span<const double> x) {
    const auto& m = detail::require_mixture(dist);
    const Vec logd = m.log_weighted_densities(x);
    const double top = *std::max_element(logd.begin(), logd.end());
    const bool binary = m.task() == Task::binary;
    Vec p(binary ? 2 : m.classes(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < logd.size(); ++i) {
        const double w = std::exp(logd[i] - top);
        const int lab = m.components[i].label;
        p[binary ? (lab > 0 ? 1 : 0) : static_cast<std::size_t>(lab - 1)] += w;
        total += w;
    }
    for (double& v : p) v /= total;
    return p;
}

// p(x) = P(Y = +1 | X = x) for binary mixtures.
inline double posterior(const OracleDistribution& dist, std::span<const double> x) {
    if (dist.task() != Task::binary) throw std::invalid_argument("posterior: binary mixture required");
    return class_posterior(dist, x)[1];
}

inline Vec draw_features(const OracleDistribution& dist, Rng& rng) {
    if (const auto* m = dist.mixture()) return m->draw_point(m->draw_component(rng), rng);
    const auto& r = *dist.regression();
    Vec x(r.weights.size());
    for (double& v : x) v = r.box * (2.0 * rng.uniform() - 1.0);
    return x;
}

inline double draw_label(const OracleDistribution& dist, std::span<const double> x, Rng& rng) {
    if (const auto* r = dist.regression()) return r->f_star(x) + r->noise_std * rng.normal();
    const Vec p = class_posterior(dist, x);
    const double u = rng.uniform();
    if (dist.task() == Task::binary) return u < p[1] ? 1.0 : -1.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        acc += p[k];
        if (u < acc) return static_cast<double>(k + 1);
    }
    return static_cast<double>(p.size());
}

namespace detail {

inline void check_compatible(const OracleDistribution& dist, const LossSpec& spec) {
    if (dist.task() != task_of(spec.kind))
        throw std::invalid_argument("oracle task " + std::string(to_string(dist.task())) +
                                    " incompatible with loss " + std::string(to_string(spec.kind)));
    if (dist.task() == Task::multiclass && dist.classes() != spec.classes)
        throw std::invalid_argument("oracle class count differs from loss class count");
}

}  // namespace detail

// Squared-error conditional loss at a given prediction.
inline double regression_conditional_loss(const OracleDistribution& dist, double prediction,
                                          std::span<const double> x) {
    const auto* r = dist.regression();
    if (!r) throw std::invalid_argument("regression oracle required");
    const double bias = prediction - r->f_star(x);
    return bias * bias + r->noise_std * r->noise_std;
}

/** L(theta; x) = E[l(theta; (x, Y)) | X = x] under the oracle's label law. The label
 *  law is read at raw, the model sees input (a feature map of raw, or raw itself). */
inline double conditional_loss(const OracleDistribution& dist, const LossSpec& spec, std::span<const double> theta,
                               std::span<const double> input, std::span<const double> raw) {
    detail::check_compatible(dist, spec);
    if (dist.task() == Task::regression) return regression_conditional_loss(dist, dot(theta, input), raw);
    const Vec p = class_posterior(dist, raw);
    if (dist.task() == Task::binary)
        return p[1] * loss(spec, theta, input, 1.0) + p[0] * loss(spec, theta, input, -1.0);
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] > 0.0) acc += p[k] * loss(spec, theta, input, static_cast<double>(k + 1));
    return acc;
}

inline double conditional_loss(const OracleDistribution& dist, const LossSpec& spec, std::span<const double> theta,
                               std::span<const double> x) {
    return conditional_loss(dist, spec, theta, x, x);
}

inline double binary_entropy(double p) { return -xlogx(p) - xlogx(1.0 - p); }

/** Pointwise Bayes conditional loss inf_g E[l(g(x), Y) | X = x]. */
inline double bayes_conditional_loss(const OracleDistribution& dist, const LossSpec& spec,
                                     std::span<const double> x) {
    detail::check_compatible(dist, spec);
    if (const auto* r = dist.regression()) return r->noise_std * r->noise_std;
    const Vec p = class_posterior(dist, x);
    if (dist.task() == Task::multiclass) {
        if (spec.kind != LossKind::multiclass_cross_entropy)
            throw std::invalid_argument("Bayes conditional loss not available for " + std::string(to_string(spec.kind)));
        double h = 0.0;
        for (double v : p) h -= xlogx(v);
        return h;
    }
    const double pp = p[1];
    switch (spec.kind) {
        case LossKind::cross_entropy: {
            const double q = std::clamp(pp, q_epsilon, 1.0 - q_epsilon);
            return -pp * std::log(q) - (1.0 - pp) * std::log1p(-q);
        }
        case LossKind::logistic: return binary_entropy(pp);
        case LossKind::squared_margin: return 4.0 * pp * (1.0 - pp);
        case LossKind::hinge: return 2.0 * std::min(pp, 1.0 - pp);
        case LossKind::exponential: return 2.0 * std::sqrt(pp * (1.0 - pp));
        default: throw std::invalid_argument("unsupported loss for Bayes conditional loss");
    }
}

struct BayesExcess {
    double excess_L = 0.0;
    double excess_Ltilde = 0.0;  // with Ltilde = L^2 / 2
};

inline BayesExcess bayes_excess(const OracleDistribution& dist, const LossSpec& spec, std::span<const double> theta,
                                const Matrix& eval_set) {
    if (eval_set.rows == 0) throw std::invalid_argument("bayes_excess: empty evaluation set");
    double dl = 0.0, dlt = 0.0;
    for (std::size_t i = 0; i < eval_set.rows; ++i) {
        const auto x = eval_set.row(i);
        const double l = conditional_loss(dist, spec, theta, x);
        const double b = bayes_conditional_loss(dist, spec, x);
        dl += l - b;
        dlt += 0.5 * (l * l - b * b);
    }
    const double n = static_cast<double>(eval_set.rows);
    return {dl / n, dlt / n};
}

inline double epsilon_star(const OracleDistribution& dist, const LossSpec& spec, const Matrix& eval_set) {
    if (eval_set.rows == 0) throw std::invalid_argument("epsilon_star: empty evaluation set");
    double best = INFINITY;
    for (std::size_t i = 0; i < eval_set.rows; ++i) best = std::min(best, bayes_conditional_loss(dist, spec, eval_set.row(i)));
    return best;
}

inline Matrix grid_2d(double lo, double hi, std::size_t per_axis) {
    Matrix g(per_axis * per_axis, 2);
    const auto ax = linspace(lo, hi, per_axis);
    for (std::size_t i = 0; i < per_axis; ++i)
        for (std::size_t j = 0; j < per_axis; ++j) {
            g(i * per_axis + j, 0) = ax[i];
            g(i * per_axis + j, 1) = ax[j];
        }
    return g;
}

/** k-NN estimate of the conditional loss from labelled points. Neighbours are found
 *  in the key space (raw features); the loss is evaluated on the model input
 *  (identical to the key for linear models, the kernel feature map otherwise).
 *  Losses are recomputed for the theta being scored. Single writer: append only
 *  between evaluations. */
class LossCalibrator {
public:
    explicit LossCalibrator(std::size_t fixed_k = 0) : fixed_k_(fixed_k) {}

    void append(std::span<const double> key, std::span<const double> input, double y) {
        keys_.push_back(Vec(key.begin(), key.end()));
        inputs_.push_back(Vec(input.begin(), input.end()));
        labels_.push_back(y);
    }
    void append(std::span<const double> x, double y) { append(x, x, y); }

    std::size_t size() const { return labels_.size(); }

    std::size_t neighbours() const {
        if (labels_.empty()) return 0;
        const std::size_t k = fixed_k_ > 0 ? fixed_k_
                                           : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(size()))));
        return std::min(k, size());
    }

    // Mean loss over the k nearest labelled points; 1 for an empty pool.
    double estimate(const LossSpec& spec, std::span<const double> theta, std::span<const double> key) const {
        if (labels_.empty()) return 1.0;
        const std::size_t k = neighbours();
        std::vector<std::pair<double, std::size_t>> d(size());
        for (std::size_t j = 0; j < size(); ++j) d[j] = {squared_distance(keys_[j], key), j};
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = d[j].second;
            acc += loss(spec, theta, inputs_[idx], labels_[idx]);
        }
        return acc / static_cast<double>(k);
    }

private:
    std::size_t fixed_k_;
    std::vector<Vec> keys_;
    std::vector<Vec> inputs_;
    Vec labels_;
};

inline double estimate_conditional_loss(const LossCalibrator& cal, const LossSpec& spec, std::span<const double> theta,
                                        std::span<const double> x) {
    return cal.estimate(spec, theta, x);
}

// Mean |Lhat - L| over the evaluation set (raw, unclipped estimates).
inline double calibration_error(const LossCalibrator& cal, const OracleDistribution& dist, const LossSpec& spec,
                                std::span<const double> theta, const Matrix& eval_set) {
    if (eval_set.rows == 0) throw std::invalid_argument("calibration_error: empty evaluation set");
    double acc = 0.0;
    for (std::size_t i = 0; i < eval_set.rows; ++i) {
        const auto x = eval_set.row(i);
        acc += std::abs(cal.estimate(spec, theta, x) - conditional_loss(dist, spec, theta, x));
    }
    return acc / static_cast<double>(eval_set.rows);
}

}  // namespace eqloss
