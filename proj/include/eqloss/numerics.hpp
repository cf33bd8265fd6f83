#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"

namespace eqloss {

class NumericsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    void validate() const {
        if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
            throw NumericsError("invalid interval [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + "]");
    }
    double width() const { return hi - lo; }
};

struct Tolerance {
    double abs_tol = 1e-10;
    double rel_tol = 0.0;
    int max_iter = 200;

    void validate() const {
        if (!(abs_tol > 0.0) || rel_tol < 0.0 || max_iter < 1)
            throw NumericsError("invalid tolerance");
    }
};

// x log x with the continuous extension 0 at x = 0.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/** Dilogarithm Li2(x) = -int_0^x log(1-u)/u du on [0, 1].
 *  Power series for x <= 1/2, reflection Li2(x) = pi^2/6 - log x log(1-x) - Li2(1-x) above. */
inline double spence(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw NumericsError("spence: argument outside [0,1]");
    constexpr double zeta2 = std::numbers::pi * std::numbers::pi / 6.0;
    if (x == 1.0) return zeta2;
    if (x > 0.5) return zeta2 - std::log(x) * std::log1p(-x) - spence(1.0 - x);
    double term = x;
    double sum = 0.0;
    for (int k = 1; k < 200; ++k) {
        const double add = term / (static_cast<double>(k) * k);
        sum += add;
        if (add < 1e-17 * sum) break;
        term *= x;
    }
    return sum;
}

namespace detail {

template <class F>
double finite_endpoint(F& f, double x, double inward) {
    double v = f(x);
    if (std::isfinite(v)) return v;
    v = f(x + inward);
    if (!std::isfinite(v)) throw NumericsError("quad: integrand not finite near endpoint");
    return v;
}

template <class F>
double simpson_step(F& f, double a, double fa, double b, double fb, double m, double fm,
                    double whole, double eps, int depth, int& budget) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    if (!std::isfinite(flm) || !std::isfinite(frm))
        throw NumericsError("quad: integrand not finite inside interval");
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * eps || (m - a) < 1e-15 * std::max(1.0, std::abs(a)))
        return left + right + delta / 15.0;
    if (--budget < 0) throw NumericsError("quad: subdivision budget exhausted");
    return simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * eps, depth - 1, budget) +
           simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * eps, depth - 1, budget);
}

}  // namespace detail

/** Adaptive Simpson quadrature. Non-finite endpoint values (integrable endpoint
 *  singularities or removable 0/0) are replaced by the value a hair inside the interval.
 *  tol.max_iter bounds the total number of subdivisions. */
template <class F>
double quad(F&& f, Interval iv, Tolerance tol = {1e-12, 0.0, 1 << 20}) {
    iv.validate();
    tol.validate();
    const double nudge = iv.width() * 1e-12;
    const double fa = detail::finite_endpoint(f, iv.lo, nudge);
    const double fb = detail::finite_endpoint(f, iv.hi, -nudge);
    const double m = 0.5 * (iv.lo + iv.hi);
    const double fm = f(m);
    if (!std::isfinite(fm)) throw NumericsError("quad: integrand not finite at midpoint");
    const double whole = iv.width() / 6.0 * (fa + 4.0 * fm + fb);
    int budget = tol.max_iter;
    return detail::simpson_step(f, iv.lo, fa, iv.hi, fb, m, fm, whole, tol.abs_tol, 60, budget);
}

// Oriented integral from a to b, split at interior breakpoints.
template <class F>
double quad_path(F&& f, double a, double b, std::span<const double> breaks,
                 Tolerance tol = {1e-13, 0.0, 1 << 20}) {
    if (a == b) return 0.0;
    const double sign = a < b ? 1.0 : -1.0;
    const double lo = std::min(a, b);
    const double hi = std::max(a, b);
    std::vector<double> cuts{lo};
    for (double c : breaks)
        if (c > lo && c < hi) cuts.push_back(c);
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        if (cuts[i + 1] > cuts[i]) total += quad(f, Interval{cuts[i], cuts[i + 1]}, tol);
    return sign * total;
}

struct Minimum {
    double arg = 0.0;
    double value = 0.0;
};

/** Grid scan over `grid` points followed by golden-section refinement in the
 *  bracket around the best grid point, down to tol.abs_tol in the argument. */
template <class F>
Minimum minimize_1d(F&& f, Interval iv, Tolerance tol = {1e-10, 0.0, 200},
                    std::size_t grid = 1024) {
    iv.validate();
    tol.validate();
    grid = std::max<std::size_t>(grid, 3);
    const double step = iv.width() / static_cast<double>(grid - 1);
    std::size_t best = 0;
    double best_v = f(iv.lo);
    for (std::size_t i = 1; i < grid; ++i) {
        const double x = i + 1 == grid ? iv.hi : iv.lo + step * static_cast<double>(i);
        const double v = f(x);
        if (v < best_v) {
            best_v = v;
            best = i;
        }
    }
    Minimum out{best + 1 == grid ? iv.hi : iv.lo + step * static_cast<double>(best), best_v};
    double a = iv.lo + step * static_cast<double>(best == 0 ? 0 : best - 1);
    double b = std::min(iv.hi, iv.lo + step * static_cast<double>(best + 1));
    constexpr double invphi = 0.6180339887498948482;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c);
    double fd = f(d);
    for (int it = 0; it < tol.max_iter && (b - a) > tol.abs_tol; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    const double x = 0.5 * (a + b);
    const double v = f(x);
    for (auto [px, pv] : {std::pair{x, v}, std::pair{c, fc}, std::pair{d, fd}})
        if (pv < out.value) out = {px, pv};
    return out;
}

// Piecewise-linear interpolant through increasing knots; constant extension outside.
class PiecewiseLinear {
public:
    PiecewiseLinear() = default;
    PiecewiseLinear(std::vector<double> z, std::vector<double> v) : z_(std::move(z)), v_(std::move(v)) {
        if (z_.size() != v_.size() || z_.empty()) throw NumericsError("piecewise-linear: bad knots");
    }

    double operator()(double z) const {
        if (z <= z_.front()) return v_.front();
        if (z >= z_.back()) return v_.back();
        const auto it = std::upper_bound(z_.begin(), z_.end(), z);
        const std::size_t j = static_cast<std::size_t>(it - z_.begin());
        const double t = (z - z_[j - 1]) / (z_[j] - z_[j - 1]);
        return v_[j - 1] + t * (v_[j] - v_[j - 1]);
    }

    const std::vector<double>& knots() const { return z_; }
    const std::vector<double>& values() const { return v_; }

private:
    std::vector<double> z_;
    std::vector<double> v_;
};

/** Greatest convex minorant of sampled points (lower hull, monotone chain). */
inline PiecewiseLinear lower_convex_envelope(std::span<const double> z, std::span<const double> v) {
    if (z.size() != v.size()) throw NumericsError("envelope: size mismatch");
    if (z.size() < 3) throw NumericsError("envelope: need at least 3 points");
    for (std::size_t i = 1; i < z.size(); ++i)
        if (!(z[i] > z[i - 1])) throw NumericsError("envelope: abscissae must increase");
    std::vector<std::size_t> hull;
    for (std::size_t i = 0; i < z.size(); ++i) {
        while (hull.size() >= 2) {
            const std::size_t a = hull[hull.size() - 2];
            const std::size_t b = hull.back();
            const double cross = (z[b] - z[a]) * (v[i] - v[a]) - (v[b] - v[a]) * (z[i] - z[a]);
            if (cross > 0.0) break;
            hull.pop_back();
        }
        hull.push_back(i);
    }
    std::vector<double> hz, hv;
    for (std::size_t i : hull) {
        hz.push_back(z[i]);
        hv.push_back(v[i]);
    }
    return {std::move(hz), std::move(hv)};
}

template <class F>
Vec finite_diff_grad(F&& f, std::span<const double> x, double h = 1e-6) {
    if (!(h > 0.0)) throw NumericsError("finite_diff_grad: h must be positive");
    Vec xp(x.begin(), x.end());
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(std::span<const double>(xp));
        xp[i] = orig - h;
        const double fm = f(std::span<const double>(xp));
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/** Bisection for f(z) = target with f nondecreasing on iv. */
template <class F>
double invert_monotone(F&& f, double target, Interval iv, Tolerance tol = {1e-13, 0.0, 200}) {
    iv.validate();
    tol.validate();
    double lo = iv.lo, hi = iv.hi;
    const double flo = f(lo), fhi = f(hi);
    if (target < flo - tol.abs_tol || target > fhi + tol.abs_tol)
        throw NumericsError("invert_monotone: target outside range");
    if (std::abs(flo - target) <= tol.abs_tol) return lo;
    if (std::abs(fhi - target) <= tol.abs_tol) return hi;
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < tol.max_iter; ++it) {
        mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (std::abs(fm - target) <= tol.abs_tol || hi - lo <= 1e-16) break;
        if (fm < target)
            lo = mid;
        else
            hi = mid;
    }
    return mid;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return out;
}

}  // namespace eqloss
