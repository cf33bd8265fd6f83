#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "models.hpp"
#include "numerics.hpp"
#include "oracles.hpp"

namespace eqloss {

enum class UncertaintyKind {
    entropy,
    least_confidence,
    margin_based,
    threshold,
    exponential,
    oracle_loss,
    estimated_loss,
    exp_oracle_loss,
};

enum class ClampMode { clamp_to_one, always_query_if_ge_one };

struct UncertaintySpec {
    UncertaintyKind kind = UncertaintyKind::margin_based;
    double mu = 1.0;
    double gamma = 1.0;
    std::size_t k = 0;  // estimated_loss neighbours; 0 selects ceil(sqrt(pool))
    ClampMode clamp = ClampMode::always_query_if_ge_one;

    void validate() const {
        if (!(mu > 0.0)) throw std::invalid_argument("uncertainty: mu must be positive");
        if (!(gamma > 0.0)) throw std::invalid_argument("uncertainty: gamma must be positive");
    }
};

inline constexpr std::string_view to_string(UncertaintyKind k) {
    switch (k) {
        case UncertaintyKind::entropy: return "entropy";
        case UncertaintyKind::least_confidence: return "least_confidence";
        case UncertaintyKind::margin_based: return "margin_based";
        case UncertaintyKind::threshold: return "threshold";
        case UncertaintyKind::exponential: return "exponential";
        case UncertaintyKind::oracle_loss: return "oracle_loss";
        case UncertaintyKind::estimated_loss: return "estimated_loss";
        case UncertaintyKind::exp_oracle_loss: return "exp_oracle_loss";
    }
    return "?";
}

inline std::optional<UncertaintyKind> uncertainty_kind_from_string(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(UncertaintyKind::exp_oracle_loss); ++i) {
        const auto k = static_cast<UncertaintyKind>(i);
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

inline constexpr std::string_view to_string(ClampMode m) {
    return m == ClampMode::clamp_to_one ? "clamp_to_one" : "always_query_if_ge_one";
}

inline std::optional<ClampMode> clamp_mode_from_string(std::string_view s) {
    if (s == "clamp_to_one") return ClampMode::clamp_to_one;
    if (s == "always_query_if_ge_one") return ClampMode::always_query_if_ge_one;
    return std::nullopt;
}

inline bool is_loss_based(UncertaintyKind k) {
    return k == UncertaintyKind::oracle_loss || k == UncertaintyKind::estimated_loss ||
           k == UncertaintyKind::exp_oracle_loss;
}

// Scalar forms: probabilistic ones take q, margin ones take a = |theta'x|.
inline double entropy_uncertainty(double q) { return -(xlogx(q) + xlogx(1.0 - q)); }
inline double least_confidence_uncertainty(double q) { return std::min(q, 1.0 - q); }
inline double margin_uncertainty(double mu, double a) { return 1.0 / (1.0 + mu * std::abs(a)); }
inline double threshold_uncertainty(double gamma, double a) { return std::abs(a) <= gamma ? 1.0 : 0.0; }
inline double exponential_uncertainty(double mu, double a) { return std::exp(-mu * std::abs(a)); }

struct UncertaintyContext {
    const OracleDistribution* oracle = nullptr;
    const LossCalibrator* calibrator = nullptr;
};

/** U(theta; x) before any clamping. Probabilistic kinds use q = sigmoid(theta'x)
 *  (clamped), margin kinds use |theta'x|. */
inline double uncertainty(const UncertaintySpec& spec, const LossSpec& loss_spec, std::span<const double> theta,
                          std::span<const double> x, std::span<const double> key, const UncertaintyContext& ctx) {
    switch (spec.kind) {
        case UncertaintyKind::entropy: return entropy_uncertainty(clamped_q(dot(theta, x)));
        case UncertaintyKind::least_confidence: return least_confidence_uncertainty(clamped_q(dot(theta, x)));
        case UncertaintyKind::margin_based: return margin_uncertainty(spec.mu, dot(theta, x));
        case UncertaintyKind::threshold: return threshold_uncertainty(spec.gamma, dot(theta, x));
        case UncertaintyKind::exponential: return exponential_uncertainty(spec.mu, dot(theta, x));
        case UncertaintyKind::oracle_loss:
        case UncertaintyKind::exp_oracle_loss: {
            if (!ctx.oracle) throw std::invalid_argument("uncertainty: oracle context required");
            const double l = conditional_loss(*ctx.oracle, loss_spec, theta, x, key);
            return spec.kind == UncertaintyKind::oracle_loss ? l : std::exp(l);
        }
        case UncertaintyKind::estimated_loss:
            if (!ctx.calibrator) throw std::invalid_argument("uncertainty: calibrator context required");
            return ctx.calibrator->estimate(loss_spec, theta, key);
    }
    return 0.0;
}

inline double uncertainty(const UncertaintySpec& spec, const LossSpec& loss_spec, std::span<const double> theta,
                          std::span<const double> x, const UncertaintyContext& ctx = {}) {
    return uncertainty(spec, loss_spec, theta, x, x, ctx);
}

/** An uncertainty bound to its context, as consumed by the sampler. eval takes
 *  (theta, model input, raw key); the key only matters for the k-NN estimate.
 *  clip_unit clips to [0, 1] before the stream query decision (estimated loss). */
struct UncertaintyModel {
    using Fn = std::function<double(std::span<const double>, std::span<const double>, std::span<const double>)>;
    Fn eval;
    ClampMode clamp = ClampMode::always_query_if_ge_one;
    bool clip_unit = false;

    double operator()(std::span<const double> theta, std::span<const double> x) const { return eval(theta, x, x); }
    double operator()(std::span<const double> theta, std::span<const double> x, std::span<const double> key) const {
        return eval(theta, x, key);
    }

    static UncertaintyModel constant(double c) {
        return {[c](std::span<const double>, std::span<const double>, std::span<const double>) { return c; },
                ClampMode::always_query_if_ge_one, false};
    }
};

inline UncertaintyModel bind_uncertainty(const UncertaintySpec& spec, const LossSpec& loss_spec,
                                         UncertaintyContext ctx = {}) {
    spec.validate();
    if ((spec.kind == UncertaintyKind::oracle_loss || spec.kind == UncertaintyKind::exp_oracle_loss) && !ctx.oracle)
        throw std::invalid_argument("uncertainty " + std::string(to_string(spec.kind)) + " needs an oracle");
    if (spec.kind == UncertaintyKind::estimated_loss && !ctx.calibrator)
        throw std::invalid_argument("estimated_loss uncertainty needs a calibrator");
    return {[spec, loss_spec, ctx](std::span<const double> theta, std::span<const double> x,
                                   std::span<const double> key) {
                return uncertainty(spec, loss_spec, theta, x, key, ctx);
            },
            spec.clamp, spec.kind == UncertaintyKind::estimated_loss};
}

}  // namespace eqloss
