#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "models.hpp"
#include "numerics.hpp"
#include "uncertainty.hpp"

namespace eqloss {

// Pairs (original loss, uncertainty) with a known closed-form equivalent loss.
enum class PairId {
    entropy_cross_entropy,
    least_confidence_cross_entropy,
    margin_squared_margin,
    threshold_logistic,
    margin_hinge,
    exponential_exponential,
};

inline constexpr PairId all_pairs[] = {
    PairId::entropy_cross_entropy, PairId::least_confidence_cross_entropy, PairId::margin_squared_margin,
    PairId::threshold_logistic,    PairId::margin_hinge,                   PairId::exponential_exponential,
};

struct PairSpec {
    LossSpec loss;
    UncertaintySpec unc;
};

inline constexpr std::string_view to_string(PairId p) {
    switch (p) {
        case PairId::entropy_cross_entropy: return "entropy_cross_entropy";
        case PairId::least_confidence_cross_entropy: return "least_confidence_cross_entropy";
        case PairId::margin_squared_margin: return "margin_squared_margin";
        case PairId::threshold_logistic: return "threshold_logistic";
        case PairId::margin_hinge: return "margin_hinge";
        case PairId::exponential_exponential: return "exponential_exponential";
    }
    return "?";
}

inline std::optional<PairId> pair_from_string(std::string_view s) {
    for (PairId p : all_pairs)
        if (to_string(p) == s) return p;
    return std::nullopt;
}

inline std::optional<PairId> identify(const PairSpec& pair) {
    using L = LossKind;
    using U = UncertaintyKind;
    const L l = pair.loss.kind;
    const U u = pair.unc.kind;
    if (l == L::cross_entropy && u == U::entropy) return PairId::entropy_cross_entropy;
    if (l == L::cross_entropy && u == U::least_confidence) return PairId::least_confidence_cross_entropy;
    if (l == L::squared_margin && u == U::margin_based) return PairId::margin_squared_margin;
    if (l == L::logistic && u == U::threshold) return PairId::threshold_logistic;
    if (l == L::hinge && u == U::margin_based) return PairId::margin_hinge;
    if (l == L::exponential && u == U::exponential) return PairId::exponential_exponential;
    return std::nullopt;
}

inline PairId require_pair(const PairSpec& pair) {
    const auto id = identify(pair);
    if (!id)
        throw std::invalid_argument("no closed-form equivalent loss for (" + std::string(to_string(pair.loss.kind)) +
                                    ", " + std::string(to_string(pair.unc.kind)) + ")");
    return *id;
}

// param is mu for margin/exponential uncertainties and gamma for the threshold.
inline PairSpec make_pair(PairId id, double param = 0.5) {
    using L = LossKind;
    using U = UncertaintyKind;
    PairSpec p;
    switch (id) {
        case PairId::entropy_cross_entropy: p = {{L::cross_entropy}, {U::entropy}}; break;
        case PairId::least_confidence_cross_entropy: p = {{L::cross_entropy}, {U::least_confidence}}; break;
        case PairId::margin_squared_margin: p = {{L::squared_margin}, {U::margin_based, param}}; break;
        case PairId::threshold_logistic: p = {{L::logistic}, {U::threshold, 1.0, param}}; break;
        case PairId::margin_hinge: p = {{L::hinge}, {U::margin_based, param}}; break;
        case PairId::exponential_exponential: p = {{L::exponential}, {U::exponential, param}}; break;
    }
    return p;
}

// Probabilistic pairs take q in (0,1) plus a label branch; the rest take s = y * theta'x.
inline bool is_probabilistic(PairId id) {
    return id == PairId::entropy_cross_entropy || id == PairId::least_confidence_cross_entropy;
}

inline constexpr double q_domain_lo = 1e-6;
inline constexpr double q_domain_hi = 1.0 - 1e-6;

/** Closed-form equivalent loss. arg is q for probabilistic pairs and s otherwise;
 *  y only selects the branch of probabilistic pairs. Constants of integration vanish
 *  at the plateau (margin pairs), at p = q in {0,1} (probabilistic pairs), and give
 *  value 1 at s = 0 (exponential pair). */
inline double equivalent_loss_closed(const PairSpec& pair, double y, double arg) {
    const PairId id = require_pair(pair);
    const double mu = pair.unc.mu;
    const double g = pair.unc.gamma;
    constexpr double ln2 = std::numbers::ln2;
    switch (id) {
        case PairId::entropy_cross_entropy: {
            const double q = arg;
            if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("entropy pair: q outside [0,1]");
            constexpr double zeta2 = std::numbers::pi * std::numbers::pi / 6.0;
            return xlogx(q) + xlogx(1.0 - q) - (y > 0.0 ? spence(q) : spence(1.0 - q)) + zeta2;
        }
        case PairId::least_confidence_cross_entropy: {
            const double q = arg;
            if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("least-confidence pair: q outside [0,1]");
            if (q < 0.5) return (y < 0.0 ? -std::log(2.0 * (1.0 - q)) : 0.0) - q + ln2;
            return (y > 0.0 ? -std::log(2.0 * q) : 0.0) - (1.0 - q) + ln2;
        }
        case PairId::margin_squared_margin: {
            const double s = arg;
            const double c = 2.0 / mu * (1.0 / mu + 1.0) * std::log1p(mu) - 2.0 / mu;
            if (s <= 0.0) return -2.0 / mu * (1.0 / mu - 1.0) * std::log1p(-mu * s) - 2.0 / mu * s + c;
            if (s < 1.0) return -2.0 / mu * (1.0 / mu + 1.0) * std::log1p(mu * s) + 2.0 / mu * s + c;
            return 0.0;
        }
        case PairId::threshold_logistic: {
            const double s = arg;
            if (s <= -g) return softplus(g);
            if (s >= g) return softplus(-g);
            return softplus(-s);
        }
        case PairId::margin_hinge: {
            const double s = arg;
            const double c = std::log1p(mu) / mu;
            if (s <= 0.0) return std::log1p(-mu * s) / mu + c;
            if (s < 1.0) return -std::log1p(mu * s) / mu + c;
            return 0.0;
        }
        case PairId::exponential_exponential: {
            // 1 + expm1(-a s)/a is the s < 0 branch rewritten; a = 1 - mu -> 0 has limit 1 - s.
            const double s = arg;
            const double a = s >= 0.0 ? 1.0 + mu : 1.0 - mu;
            if (a == 0.0) return 1.0 - s;
            return 1.0 + std::expm1(-a * s) / a;
        }
    }
    return 0.0;
}

// Points where U or l' is not smooth in the scalar argument.
inline std::vector<double> breakpoints(const PairSpec& pair) {
    switch (require_pair(pair)) {
        case PairId::entropy_cross_entropy: return {};
        case PairId::least_confidence_cross_entropy: return {0.5};
        case PairId::margin_squared_margin:
        case PairId::margin_hinge: return {0.0, 1.0};
        case PairId::threshold_logistic: return {-pair.unc.gamma, pair.unc.gamma};
        case PairId::exponential_exponential: return {0.0};
    }
    return {};
}

/** U(u) * dl/du in the scalar argument u (q or s). */
inline double equivalent_loss_integrand(const PairSpec& pair, double y, double u) {
    const PairId id = require_pair(pair);
    if (is_probabilistic(id)) {
        const double dl = y > 0.0 ? -1.0 / u : 1.0 / (1.0 - u);
        const double unc =
            id == PairId::entropy_cross_entropy ? entropy_uncertainty(u) : least_confidence_uncertainty(u);
        return unc * dl;
    }
    double unc = 0.0;
    switch (pair.unc.kind) {
        case UncertaintyKind::margin_based: unc = margin_uncertainty(pair.unc.mu, u); break;
        case UncertaintyKind::threshold: unc = threshold_uncertainty(pair.unc.gamma, u); break;
        case UncertaintyKind::exponential: unc = exponential_uncertainty(pair.unc.mu, u); break;
        default: break;
    }
    return unc * margin_loss_derivative(pair.loss.kind, u);
}

// A point where the closed form is known without integration: zero at the plateau or
// at q in {0,1}, one at s = 0 for the exponential pair, the upper plateau for the threshold.
inline double default_anchor(const PairSpec& pair, double y) {
    switch (require_pair(pair)) {
        case PairId::entropy_cross_entropy:
        case PairId::least_confidence_cross_entropy: return y > 0.0 ? 1.0 : 0.0;
        case PairId::margin_squared_margin:
        case PairId::margin_hinge: return 1.0;
        case PairId::threshold_logistic: return pair.unc.gamma;
        case PairId::exponential_exponential: return 0.0;
    }
    return 0.0;
}

/** Equivalent loss rebuilt from U * l' by quadrature from the anchor, plus the closed
 *  form's value at the anchor. */
inline double equivalent_loss_numeric(const PairSpec& pair, double y, double arg, double anchor,
                                      Tolerance tol = {1e-13, 0.0, 1 << 20}) {
    const PairId id = require_pair(pair);
    if (is_probabilistic(id) && !(arg >= q_domain_lo && arg <= q_domain_hi))
        throw NumericsError("equivalent_loss_numeric: q outside [1e-6, 1-1e-6]");
    const auto br = breakpoints(pair);
    const double integral =
        quad_path([&](double u) { return equivalent_loss_integrand(pair, y, u); }, anchor, arg, br, tol);
    return equivalent_loss_closed(pair, y, anchor) + integral;
}

inline double equivalent_loss_numeric(const PairSpec& pair, double y, double arg) {
    return equivalent_loss_numeric(pair, y, arg, default_anchor(pair, y));
}

// Equivalent loss at a labelled sample under a linear or logistic-linear model.
inline double equivalent_loss(const PairSpec& pair, std::span<const double> theta, std::span<const double> x,
                              double y) {
    const double z = dot(theta, x);
    if (is_probabilistic(require_pair(pair))) return equivalent_loss_closed(pair, y, clamped_q(z));
    return equivalent_loss_closed(pair, y, y * z);
}

struct ScalarLossCurve {
    std::function<double(double)> f;
    Interval domain;
    std::vector<double> breakpoints;

    double operator()(double u) const { return f(u); }
};

// Curve in the pair's natural argument (q for probabilistic pairs, s otherwise).
inline ScalarLossCurve equivalent_curve(const PairSpec& pair, double y = 1.0) {
    const PairId id = require_pair(pair);
    const Interval dom = is_probabilistic(id) ? Interval{q_domain_lo, q_domain_hi} : Interval{-20.0, 20.0};
    return {[pair, y](double u) { return equivalent_loss_closed(pair, y, u); }, dom, breakpoints(pair)};
}

// Curve in the prediction yhat: yhat = 2q - 1 for probabilistic pairs, s = y * yhat otherwise.
inline ScalarLossCurve equivalent_curve_yhat(const PairSpec& pair, double y = 1.0) {
    const PairId id = require_pair(pair);
    if (is_probabilistic(id)) {
        std::vector<double> br;
        for (double b : breakpoints(pair)) br.push_back(2.0 * b - 1.0);
        return {[pair, y](double yh) { return equivalent_loss_closed(pair, y, 0.5 * (1.0 + yh)); },
                {2.0 * q_domain_lo - 1.0, 2.0 * q_domain_hi - 1.0},
                br};
    }
    std::vector<double> br;
    for (double b : breakpoints(pair)) br.push_back(y * b);
    return {[pair, y](double yh) { return equivalent_loss_closed(pair, y, y * yh); }, {-20.0, 20.0}, br};
}

struct ConvexityResult {
    bool convex = true;
    // Witness a < mid < b with f(mid) > (f(a) + f(b)) / 2 + slack; the largest violation found.
    double a = 0.0, mid = 0.0, b = 0.0;
    double violation = 0.0;
};

/** Midpoint convexity over all pairs of grid points. */
inline ConvexityResult convexity_probe(const ScalarLossCurve& curve, Interval iv, std::size_t grid = 201,
                                       double slack = 1e-10) {
    iv.validate();
    if (grid < 64) throw std::invalid_argument("convexity_probe: grid must be at least 64");
    const auto pts = linspace(iv.lo, iv.hi, grid);
    std::vector<double> vals(grid);
    for (std::size_t i = 0; i < grid; ++i) vals[i] = curve(pts[i]);
    ConvexityResult out;
    for (std::size_t i = 0; i < grid; ++i)
        for (std::size_t j = i + 2; j < grid; ++j) {
            const double m = 0.5 * (pts[i] + pts[j]);
            const double excess = curve(m) - 0.5 * (vals[i] + vals[j]);
            if (excess > slack && excess > out.violation) out = {false, pts[i], m, pts[j], excess};
        }
    return out;
}

// Largest absolute slope between adjacent grid points.
inline double lipschitz_probe(const ScalarLossCurve& curve, Interval iv, std::size_t grid = 4097) {
    iv.validate();
    if (grid < 1024) throw std::invalid_argument("lipschitz_probe: grid must be at least 1024");
    const auto pts = linspace(iv.lo, iv.hi, grid);
    double prev = curve(pts[0]);
    double best = 0.0;
    for (std::size_t i = 1; i < grid; ++i) {
        const double v = curve(pts[i]);
        best = std::max(best, std::abs(v - prev) / (pts[i] - pts[i - 1]));
        prev = v;
    }
    return best;
}

}  // namespace eqloss
