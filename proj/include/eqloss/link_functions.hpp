#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "equivalent_loss.hpp"
#include "numerics.hpp"

namespace eqloss {

// Nominal kink of the threshold-pair closed form: 2 / (e^{g/(1+e^g)} + e^{-g/(1+e^{-g})}) - 1.
inline double threshold_z0(double gamma) {
    return 2.0 / (std::exp(gamma / (1.0 + std::exp(gamma))) + std::exp(-gamma / (1.0 + std::exp(-gamma)))) - 1.0;
}

namespace detail {

inline double half_xlogx_sum(double z) { return 0.5 * (xlogx(1.0 + z) + xlogx(1.0 - z)); }

}  // namespace detail

/** Closed-form link functions psi(z), z in [0, 1]. */
inline double psi_closed(const PairSpec& pair, double z) {
    if (!(z >= 0.0 && z <= 1.0)) throw std::invalid_argument("psi_closed: z outside [0,1]");
    const double mu = pair.unc.mu;
    switch (require_pair(pair)) {
        case PairId::entropy_cross_entropy: {
            const double p = 0.5 * (1.0 + z);
            const double r = 0.5 * (1.0 - z);
            return p * spence(p) + r * spence(r) - spence(0.5) - detail::half_xlogx_sum(z);
        }
        case PairId::least_confidence_cross_entropy: return 0.5 * xlogx(1.0 + z) - 0.5 * z;
        case PairId::margin_squared_margin:
            return 2.0 / (mu * mu) * (1.0 + mu * z) * std::log1p(mu * z) - 2.0 / mu * z;
        case PairId::threshold_logistic: {
            const double z0 = threshold_z0(pair.unc.gamma);
            if (z <= z0) return detail::half_xlogx_sum(z);
            return 0.5 * ((1.0 + z) * std::log1p(z0) + (1.0 - z) * std::log1p(-z0));
        }
        case PairId::margin_hinge: return std::log1p(mu) / mu * z;
        case PairId::exponential_exponential: {
            if (mu == 1.0) throw std::invalid_argument("psi_closed: exponential pair undefined at mu = 1");
            const double a = 0.5 * (1.0 + mu), b = 0.5 * (1.0 - mu);
            return (1.0 - mu * z - std::pow(1.0 - z, a) * std::pow(1.0 + z, b)) / (1.0 - mu * mu);
        }
    }
    return 0.0;
}

enum class LinkProvenance { closed_form, numeric };

class LinkFunction {
public:
    LinkFunction(std::function<double(double)> f, LinkProvenance prov) : f_(std::move(f)), prov_(prov) {}

    double operator()(double z) const { return f_(z); }
    LinkProvenance provenance() const { return prov_; }

private:
    std::function<double(double)> f_;
    LinkProvenance prov_;
};

inline LinkFunction psi_closed_link(const PairSpec& pair) {
    require_pair(pair);
    return {[pair](double z) { return psi_closed(pair, z); }, LinkProvenance::closed_form};
}

/** l~(yhat, y) over a prediction range. Margin pairs: l~(y * yhat) with yhat in [-20, 20];
 *  probabilistic pairs: branch y at q = (1 + yhat)/2 with q in [1e-6, 1 - 1e-6]. */
struct TwoBranchLoss {
    std::function<double(double, double)> f;
    Interval range;
};

inline TwoBranchLoss two_branch(const PairSpec& pair) {
    const PairId id = require_pair(pair);
    if (is_probabilistic(id))
        return {[pair](double yh, double y) { return equivalent_loss_closed(pair, y, 0.5 * (1.0 + yh)); },
                {2.0 * q_domain_lo - 1.0, 2.0 * q_domain_hi - 1.0}};
    return {[pair](double yh, double y) { return equivalent_loss_closed(pair, y, y * yh); }, {-20.0, 20.0}};
}

struct ConditionalRisk {
    double H = 0.0;
    double Hminus = 0.0;
    double argmin = 0.0;  // minimiser of C_p over the full range
    bool saturated = false;
};

/** H(p) = inf C_p and H^-(p) = inf over yhat (2p - 1) <= 0 of C_p, with
 *  C_p(yhat) = p l~(yhat, +1) + (1 - p) l~(yhat, -1). */
inline ConditionalRisk conditional_risk(const TwoBranchLoss& loss, double p) {
    const auto cp = [&](double yh) {
        const double v = p * loss.f(yh, 1.0) + (1.0 - p) * loss.f(yh, -1.0);
        if (!std::isfinite(v)) throw NumericsError("conditional risk not finite");
        return v;
    };
    const Interval& r = loss.range;
    const Minimum all = minimize_1d(cp, r);
    Minimum minus = all;
    if (p > 0.5)
        minus = minimize_1d(cp, {r.lo, 0.0});
    else if (p < 0.5)
        minus = minimize_1d(cp, {0.0, r.hi});
    const double edge = 1e-6 * r.width();
    const bool sat = all.arg - r.lo < edge || r.hi - all.arg < edge;
    return {all.value, std::max(minus.value, all.value), all.arg, sat};
}

struct PsiNumeric {
    std::vector<double> z;
    std::vector<double> psi_tilde;
    PiecewiseLinear envelope;
    std::size_t saturated = 0;  // z-grid points (z < 1) whose H-minimiser sits at the range edge

    LinkFunction link() const {
        return {[env = envelope](double zz) { return env(zz); }, LinkProvenance::numeric};
    }
};

/** psi~(z) = H^-((1+z)/2) - H((1+z)/2) on a uniform z-grid, psi = its lower convex envelope. */
inline PsiNumeric psi_numeric(const TwoBranchLoss& loss, std::size_t grid = 4097) {
    if (grid < 3) throw std::invalid_argument("psi_numeric: grid too small");
    PsiNumeric out;
    out.z = linspace(0.0, 1.0, grid);
    out.psi_tilde.resize(grid);
    for (std::size_t i = 0; i < grid; ++i) {
        const ConditionalRisk cr = conditional_risk(loss, 0.5 * (1.0 + out.z[i]));
        out.psi_tilde[i] = cr.Hminus - cr.H;
        if (cr.saturated && out.z[i] < 1.0) ++out.saturated;
    }
    out.envelope = lower_convex_envelope(out.z, out.psi_tilde);
    return out;
}

inline PsiNumeric psi_numeric(const PairSpec& pair, std::size_t grid = 4097) {
    return psi_numeric(two_branch(pair), grid);
}

// Left end of the envelope's last linear piece (where a tangent-line tail starts).
// Trailing hull segments whose slopes agree to rel_tol are one piece; grid rounding
// leaves spurious vertices along an exactly linear tail.
inline double final_segment_start(const PiecewiseLinear& env, double rel_tol = 1e-6) {
    const auto& k = env.knots();
    const auto& v = env.values();
    if (k.size() < 2) return k.front();
    auto slope = [&](std::size_t j) { return (v[j + 1] - v[j]) / (k[j + 1] - k[j]); };
    std::size_t j = k.size() - 2;
    const double tail = slope(j);
    while (j > 0 && std::abs(slope(j - 1) - tail) <= rel_tol * std::abs(tail)) --j;
    return k[j];
}

struct TaylorResult {
    bool linear = false;
    double value = 0.0;  // psi(z)/z^2 near 0, or the slope psi'(0) when linear
};

/** psi(z)/z^2 at z = 1e-3, Richardson-extrapolated with z = 2e-3. A link is linear-order
 *  when the extrapolated slope exceeds 1e-6 and psi(h)/psi(2h) is closer to 1/2 than to 1/4. */
inline TaylorResult taylor_coefficient(const LinkFunction& psi, double h = 1e-3) {
    const double p1 = psi(h), p2 = psi(2.0 * h);
    const double slope = 2.0 * (p1 / h) - p2 / (2.0 * h);
    if (slope > 1e-6 && p2 > 0.0 && p1 / p2 > 0.375) return {true, slope};
    return {false, 2.0 * (p1 / (h * h)) - p2 / (4.0 * h * h)};
}

// psi(z) > 0 on z in {0.01, 0.02, ..., 1}.
inline bool is_classification_calibrated(const LinkFunction& psi) {
    for (int i = 1; i <= 100; ++i)
        if (!(psi(0.01 * i) > 0.0)) return false;
    return true;
}

/** psi^{-1}(surrogate_excess) on [0, 1], saturating at 1. */
inline double transfer_risk(const LinkFunction& psi, double surrogate_excess) {
    if (!(surrogate_excess >= 0.0)) throw std::invalid_argument("transfer_risk: negative excess");
    if (surrogate_excess >= psi(1.0)) return 1.0;
    return invert_monotone([&](double z) { return psi(z); }, surrogate_excess, {0.0, 1.0});
}

}  // namespace eqloss
