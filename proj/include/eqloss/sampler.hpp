#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "linalg.hpp"
#include "models.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "uncertainty.hpp"

namespace eqloss {

enum class AlgorithmKind { stream, pool, topk, mixture };
enum class StepSchedule { constant, horizon };
enum class PoolStepScaling { with_St_over_n, none };

inline constexpr std::string_view to_string(AlgorithmKind k) {
    switch (k) {
        case AlgorithmKind::stream: return "stream";
        case AlgorithmKind::pool: return "pool";
        case AlgorithmKind::topk: return "topk";
        case AlgorithmKind::mixture: return "mixture";
    }
    return "?";
}

inline std::optional<AlgorithmKind> algorithm_kind_from_string(std::string_view s) {
    for (auto k : {AlgorithmKind::stream, AlgorithmKind::pool, AlgorithmKind::topk, AlgorithmKind::mixture})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

inline constexpr std::string_view to_string(StepSchedule s) { return s == StepSchedule::constant ? "constant" : "horizon"; }

inline std::optional<StepSchedule> step_schedule_from_string(std::string_view s) {
    if (s == "constant") return StepSchedule::constant;
    if (s == "horizon") return StepSchedule::horizon;
    return std::nullopt;
}

inline constexpr std::string_view to_string(PoolStepScaling s) {
    return s == PoolStepScaling::with_St_over_n ? "with_St_over_n" : "none";
}

inline std::optional<PoolStepScaling> pool_step_scaling_from_string(std::string_view s) {
    if (s == "with_St_over_n") return PoolStepScaling::with_St_over_n;
    if (s == "none") return PoolStepScaling::none;
    return std::nullopt;
}

struct SamplerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AlgorithmSpec {
    AlgorithmKind kind = AlgorithmKind::stream;
    std::size_t T = 1000;
    StepSchedule schedule = StepSchedule::constant;
    double eta = 1e-3;  // constant schedule
    double D = 1.0;     // horizon schedule: eta = D / (G sqrt(T + 1))
    double G = 1.0;
    std::size_t m = 1;
    double gamma_mix = 0.5;
    PoolStepScaling scaling = PoolStepScaling::with_St_over_n;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    double radius = std::numeric_limits<double>::infinity();  // M_Theta
    std::size_t snapshot_stride = 0;                          // 0: max(1, T / 1000)
    std::size_t log_stride = 0;                               // 0: every step up to 1e5 steps, else T / 1e5

    double step_size() const {
        if (schedule == StepSchedule::constant) return eta;
        return D / (G * std::sqrt(static_cast<double>(T) + 1.0));
    }

    std::size_t effective_snapshot_stride() const {
        return snapshot_stride > 0 ? snapshot_stride : std::max<std::size_t>(1, T / 1000);
    }

    std::size_t effective_log_stride() const {
        if (log_stride > 0) return log_stride;
        return T <= 100000 ? 1 : T / 100000;
    }

    void validate(std::size_t pool_size = 0) const {
        if (!(step_size() > 0.0) || !std::isfinite(step_size()))
            throw std::invalid_argument("algorithm: step size must be positive and finite");
        if (!(radius > 0.0)) throw std::invalid_argument("algorithm: radius must be positive");
        if (kind == AlgorithmKind::topk || kind == AlgorithmKind::mixture) {
            if (m < 1 || (pool_size > 0 && m > pool_size))
                throw std::invalid_argument("algorithm: need 1 <= m <= n, got m = " + std::to_string(m));
        }
        if (kind == AlgorithmKind::mixture && !(gamma_mix > 0.0 && gamma_mix < 1.0))
            throw std::invalid_argument("algorithm: gamma_mix must lie in (0, 1)");
    }
};

inline constexpr std::size_t no_index = std::numeric_limits<std::size_t>::max();

// ---- sample sources ------------------------------------------------------------

struct Arrival {
    Vec input;  // what the model sees
    Vec key;    // raw features (calibrator metric, oracle label law)
    std::size_t index = no_index;
};

class StreamSource {
public:
    virtual ~StreamSource() = default;
    virtual Arrival draw(Rng& rng) const = 0;
    virtual double label(const Arrival& a, Rng& rng) const = 0;
};

class OracleStream final : public StreamSource {
public:
    explicit OracleStream(const OracleDistribution& dist) : dist_(&dist) {}
    Arrival draw(Rng& rng) const override {
        Vec x = draw_features(*dist_, rng);
        return {x, x, no_index};
    }
    double label(const Arrival& a, Rng& rng) const override { return draw_label(*dist_, a.key, rng); }

private:
    const OracleDistribution* dist_;
};

// Uniform draws with replacement from a stored dataset (its empirical distribution).
class DatasetStream final : public StreamSource {
public:
    DatasetStream(Matrix X, Vec y) : X_(std::move(X)), y_(std::move(y)) {
        require_same_size(X_.rows, y_.size(), "dataset stream");
        if (X_.rows == 0) throw std::invalid_argument("dataset stream: empty");
    }
    Arrival draw(Rng& rng) const override {
        const std::size_t i = rng.index(X_.rows);
        Vec x(X_.row(i).begin(), X_.row(i).end());
        return {x, x, i};
    }
    double label(const Arrival& a, Rng&) const override { return y_[a.index]; }

private:
    Matrix X_;
    Vec y_;
};

// X from a weighted finite support, Y from the oracle's conditional law at that point.
class FiniteSupportStream final : public StreamSource {
public:
    FiniteSupportStream(Matrix points, Vec weights, const OracleDistribution& dist)
        : pts_(std::move(points)), w_(std::move(weights)), dist_(&dist) {
        require_same_size(pts_.rows, w_.size(), "finite support");
        const double s = std::accumulate(w_.begin(), w_.end(), 0.0);
        if (!(std::abs(s - 1.0) <= 1e-12)) throw std::invalid_argument("finite support: weights must sum to 1");
    }
    Arrival draw(Rng& rng) const override {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t i = pts_.rows - 1;
        for (std::size_t j = 0; j < pts_.rows; ++j) {
            acc += w_[j];
            if (u < acc) {
                i = j;
                break;
            }
        }
        Vec x(pts_.row(i).begin(), pts_.row(i).end());
        return {x, x, i};
    }
    double label(const Arrival& a, Rng& rng) const override { return draw_label(*dist_, a.key, rng); }

    const Matrix& points() const { return pts_; }
    const Vec& weights() const { return w_; }

private:
    Matrix pts_;
    Vec w_;
    const OracleDistribution* dist_;
};

class PoolSource {
public:
    virtual ~PoolSource() = default;
    virtual std::size_t size() const = 0;
    virtual std::span<const double> input(std::size_t i) const = 0;
    virtual std::span<const double> key(std::size_t i) const { return input(i); }
    virtual double label(std::size_t i, Rng& rng) const = 0;
    // true when repeated queries draw a fresh label
    virtual bool fresh_labels() const = 0;
};

class OraclePool final : public PoolSource {
public:
    OraclePool(const OracleDistribution& dist, Matrix keys, std::optional<Matrix> inputs = std::nullopt)
        : dist_(&dist), keys_(std::move(keys)), inputs_(std::move(inputs)) {
        if (keys_.rows == 0) throw std::invalid_argument("pool: empty");
        if (inputs_) require_same_size(inputs_->rows, keys_.rows, "pool inputs");
    }
    std::size_t size() const override { return keys_.rows; }
    std::span<const double> input(std::size_t i) const override { return inputs_ ? inputs_->row(i) : keys_.row(i); }
    std::span<const double> key(std::size_t i) const override { return keys_.row(i); }
    double label(std::size_t i, Rng& rng) const override { return draw_label(*dist_, keys_.row(i), rng); }
    bool fresh_labels() const override { return true; }

private:
    const OracleDistribution* dist_;
    Matrix keys_;
    std::optional<Matrix> inputs_;
};

// Stored labels; a repeated query returns the same label.
class DatasetPool final : public PoolSource {
public:
    DatasetPool(Matrix keys, Vec y, std::optional<Matrix> inputs = std::nullopt)
        : keys_(std::move(keys)), y_(std::move(y)), inputs_(std::move(inputs)) {
        require_same_size(keys_.rows, y_.size(), "dataset pool");
        if (keys_.rows == 0) throw std::invalid_argument("pool: empty");
        if (inputs_) require_same_size(inputs_->rows, keys_.rows, "pool inputs");
    }
    std::size_t size() const override { return keys_.rows; }
    std::span<const double> input(std::size_t i) const override { return inputs_ ? inputs_->row(i) : keys_.row(i); }
    std::span<const double> key(std::size_t i) const override { return keys_.row(i); }
    double label(std::size_t i, Rng&) const override { return y_[i]; }
    bool fresh_labels() const override { return false; }

private:
    Matrix keys_;
    Vec y_;
    std::optional<Matrix> inputs_;
};

// ---- single steps --------------------------------------------------------------

/** One step's outcome. direction is the vector g with theta <- P(theta - eta g);
 *  empty when nothing was queried. */
struct Update {
    bool queried = false;
    std::size_t index = no_index;
    double u = 0.0;
    double s_total = std::numeric_limits<double>::quiet_NaN();
    bool fallback = false;
    Vec input, key;
    double y = 0.0;
    Vec direction;
};

namespace detail {

inline double checked_u(double u, const char* where) {
    if (!std::isfinite(u) || u < 0.0)
        throw SamplerError(std::string(where) + ": uncertainty must be finite and nonnegative, got " + std::to_string(u));
    return u;
}

}  // namespace detail

/** Streaming step: query iff xi <= U with xi uniform on (0, 1]; U > 1 always queries and,
 *  under always_query_if_ge_one, scales the gradient by U. */
inline Update stream_update(const LossSpec& loss_spec, const UncertaintyModel& unc, const StreamSource& src,
                            std::span<const double> theta, Rng& features, Rng& coins, Rng& labels) {
    Update out;
    Arrival a = src.draw(features);
    double u = detail::checked_u(unc(theta, a.input, a.key), "stream");
    if (unc.clip_unit) u = std::min(u, 1.0);
    out.u = u;
    out.index = a.index;
    const double xi = coins.uniform_pos();
    if (xi <= std::min(u, 1.0)) {
        out.queried = true;
        out.y = src.label(a, labels);
        out.direction = loss_grad(loss_spec, theta, a.input, out.y);
        if (u > 1.0 && unc.clamp == ClampMode::always_query_if_ge_one)
            for (double& g : out.direction) g *= u;
    }
    out.input = std::move(a.input);
    out.key = std::move(a.key);
    return out;
}

// The m largest entries of u, ties broken by lowest index, in that order.
inline std::vector<std::size_t> top_indices(std::span<const double> u, std::size_t m) {
    if (m < 1 || m > u.size()) throw std::invalid_argument("top_indices: need 1 <= m <= n");
    std::vector<std::size_t> idx(u.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(),
                      [&](std::size_t a, std::size_t b) { return u[a] > u[b] || (u[a] == u[b] && a < b); });
    idx.resize(m);
    return idx;
}

inline Vec pool_uncertainties(const UncertaintyModel& unc, const PoolSource& pool, std::span<const double> theta) {
    Vec u(pool.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = detail::checked_u(unc(theta, pool.input(i), pool.key(i)), "pool");
    return u;
}

/** Pool, top-m and mixture step. picks drives index selection (and the mixture coin),
 *  labels the oracle draw. */
inline Update pool_update(const AlgorithmSpec& spec, const LossSpec& loss_spec, const UncertaintyModel& unc,
                          const PoolSource& pool, std::span<const double> theta, Rng& picks, Rng& labels) {
    const std::size_t n = pool.size();
    const Vec u = pool_uncertainties(unc, pool, theta);
    Update out;
    out.s_total = std::accumulate(u.begin(), u.end(), 0.0);
    double scale = 1.0;
    switch (spec.kind) {
        case AlgorithmKind::pool: {
            if (!(out.s_total > 0.0)) {
                out.fallback = true;
                out.index = picks.index(n);
            } else {
                const double r = picks.uniform() * out.s_total;
                double acc = 0.0;
                out.index = no_index;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += u[i];
                    if (r < acc) {
                        out.index = i;
                        break;
                    }
                }
                if (out.index == no_index)  // rounding at the tail: last positive entry
                    for (std::size_t i = n; i-- > 0;)
                        if (u[i] > 0.0) {
                            out.index = i;
                            break;
                        }
            }
            if (spec.scaling == PoolStepScaling::with_St_over_n) scale = out.s_total / static_cast<double>(n);
            break;
        }
        case AlgorithmKind::topk: {
            const auto top = top_indices(u, spec.m);
            out.index = top[picks.index(spec.m)];
            break;
        }
        case AlgorithmKind::mixture: {
            const double coin = picks.uniform();
            if (coin < 1.0 - spec.gamma_mix) {
                out.index = picks.index(n);
            } else {
                const auto top = top_indices(u, spec.m);
                out.index = top[picks.index(spec.m)];
            }
            break;
        }
        case AlgorithmKind::stream: throw std::invalid_argument("pool_update: stream algorithm");
    }
    out.u = u[out.index];
    out.queried = true;
    out.input.assign(pool.input(out.index).begin(), pool.input(out.index).end());
    out.key.assign(pool.key(out.index).begin(), pool.key(out.index).end());
    out.y = pool.label(out.index, labels);
    out.direction = loss_grad(loss_spec, theta, out.input, out.y);
    if (scale != 1.0)
        for (double& g : out.direction) g *= scale;
    return out;
}

// ---- runs ----------------------------------------------------------------------

struct StepLog {
    std::size_t step = 0;
    bool queried = false;
    std::size_t index = no_index;
    double u = 0.0;
    double s_total = std::numeric_limits<double>::quiet_NaN();
    std::size_t queries_so_far = 0;
};

struct Snapshot {
    std::size_t step = 0;  // t: theta_t and theta_bar_t, with t = 1 the initial point
    Vec theta;
    Vec theta_bar;
};

struct MetricPoint {
    std::size_t step = 0;
    std::size_t queries = 0;
    double train = 0.0;
    double test = 0.0;
};

struct RunRecord {
    AlgorithmSpec spec;
    std::string rng = std::string(Rng::name);
    std::vector<StepLog> steps;
    std::vector<Snapshot> snapshots;
    std::vector<MetricPoint> metrics;
    Vec theta_init;
    Vec theta;      // theta_{T+1}
    Vec theta_bar;  // theta_bar_{T+1}
    std::size_t queries = 0;
    std::size_t fallback_steps = 0;
    double wall_seconds = 0.0;
};

struct RunHooks {
    // (theta_t, theta_bar_t) -> (train, test)
    std::function<std::pair<double, double>(std::span<const double>, std::span<const double>)> metric;
    std::size_t metric_stride = 0;  // 0: only at the first and last step
    std::function<void(std::span<const double> key, std::span<const double> input, double y)> on_label;
};

// Substream tags per run.
inline constexpr std::uint64_t tag_features = 1, tag_coins = 2, tag_labels = 3, tag_picks = 4;

namespace detail {

template <class StepFn>
RunRecord run_loop(const AlgorithmSpec& spec, Vec theta0, const RunHooks& hooks, StepFn&& step) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.spec = spec;
    const double eta = spec.step_size();
    const std::size_t snap = spec.effective_snapshot_stride();
    const std::size_t logs = spec.effective_log_stride();
    Vec theta = std::move(theta0);
    project_to_ball(theta, spec.radius);
    Vec bar = theta;
    rec.theta_init = theta;

    auto record_metric = [&](std::size_t t) {
        if (hooks.metric) {
            const auto [tr, te] = hooks.metric(theta, bar);
            rec.metrics.push_back({t, rec.queries, tr, te});
        }
    };
    rec.snapshots.push_back({1, theta, bar});
    record_metric(1);

    for (std::size_t t = 1; t <= spec.T; ++t) {
        Update up = step(theta);
        if (up.queried) {
            if (!all_finite(up.direction))
                throw SamplerError("non-finite gradient at step " + std::to_string(t));
            axpy(-eta, up.direction, theta);
            project_to_ball(theta, spec.radius);
            ++rec.queries;
            if (hooks.on_label) hooks.on_label(up.key, up.input, up.y);
        }
        if (up.fallback) ++rec.fallback_steps;
        const double w = 1.0 / static_cast<double>(t + 1);
        for (std::size_t j = 0; j < theta.size(); ++j) bar[j] = (1.0 - w) * bar[j] + w * theta[j];

        if (t % logs == 0 || t == spec.T)
            rec.steps.push_back({t, up.queried, up.index, up.u, up.s_total, rec.queries});
        if (t % snap == 0 || t == spec.T) rec.snapshots.push_back({t + 1, theta, bar});
        if ((hooks.metric_stride > 0 && t % hooks.metric_stride == 0) || t == spec.T) record_metric(t + 1);
    }
    rec.theta = std::move(theta);
    rec.theta_bar = std::move(bar);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

}  // namespace detail

/** Streaming sampler over a stream source. */
inline RunRecord run_stream(const AlgorithmSpec& spec, const LossSpec& loss_spec, const UncertaintyModel& unc,
                            const StreamSource& src, Vec theta0, const RunHooks& hooks = {}) {
    if (spec.kind != AlgorithmKind::stream) throw std::invalid_argument("run_stream: spec.kind must be stream");
    spec.validate();
    const Rng base(spec.seed, spec.stream);
    Rng feats = base.substream(tag_features), coins = base.substream(tag_coins), labels = base.substream(tag_labels);
    return detail::run_loop(spec, std::move(theta0), hooks, [&](std::span<const double> theta) {
        return stream_update(loss_spec, unc, src, theta, feats, coins, labels);
    });
}

/** Pool, top-m and mixture samplers, selected by spec.kind. */
inline RunRecord run_pool(const AlgorithmSpec& spec, const LossSpec& loss_spec, const UncertaintyModel& unc,
                          const PoolSource& pool, Vec theta0, const RunHooks& hooks = {}) {
    if (spec.kind == AlgorithmKind::stream) throw std::invalid_argument("run_pool: stream spec");
    spec.validate(pool.size());
    const Rng base(spec.seed, spec.stream);
    Rng picks = base.substream(tag_picks), labels = base.substream(tag_labels);
    return detail::run_loop(spec, std::move(theta0), hooks, [&](std::span<const double> theta) {
        return pool_update(spec, loss_spec, unc, pool, theta, picks, labels);
    });
}

inline RunRecord run_topk(AlgorithmSpec spec, const LossSpec& loss_spec, const UncertaintyModel& unc,
                          const PoolSource& pool, Vec theta0, const RunHooks& hooks = {}) {
    spec.kind = AlgorithmKind::topk;
    return run_pool(spec, loss_spec, unc, pool, std::move(theta0), hooks);
}

inline RunRecord run_mixture(AlgorithmSpec spec, const LossSpec& loss_spec, const UncertaintyModel& unc,
                             const PoolSource& pool, Vec theta0, const RunHooks& hooks = {}) {
    spec.kind = AlgorithmKind::mixture;
    return run_pool(spec, loss_spec, unc, pool, std::move(theta0), hooks);
}

/** Plain SGD on every arrival; shares the feature and label substreams with run_stream. */
inline RunRecord run_sgd(AlgorithmSpec spec, const LossSpec& loss_spec, const StreamSource& src, Vec theta0,
                         const RunHooks& hooks = {}) {
    spec.kind = AlgorithmKind::stream;
    spec.validate();
    const Rng base(spec.seed, spec.stream);
    Rng feats = base.substream(tag_features), labels = base.substream(tag_labels);
    return detail::run_loop(spec, std::move(theta0), hooks, [&](std::span<const double> theta) {
        Update up;
        Arrival a = src.draw(feats);
        up.queried = true;
        up.u = 1.0;
        up.index = a.index;
        up.y = src.label(a, labels);
        up.direction = loss_grad(loss_spec, theta, a.input, up.y);
        up.input = std::move(a.input);
        up.key = std::move(a.key);
        return up;
    });
}

// theta_1 ~ N(0, I) scaled by 0.1 M_Theta (0.1 when the radius is unbounded).
inline Vec initial_theta(std::size_t dim, double radius, Rng& rng) {
    const double s = 0.1 * (std::isfinite(radius) ? radius : 1.0);
    Vec t(dim);
    for (double& v : t) v = s * rng.normal();
    return t;
}

// ---- diagnostics ---------------------------------------------------------------

struct UpdateCheck {
    Vec mean;    // Monte-Carlo mean of g (update / -eta)
    Vec target;  // claimed objective gradient
    Vec stderr_;
    Vec z;
    double max_abs_z = 0.0;
};

/** Compares the mean one-step direction over n_draws against a target gradient.
 *  draw(rng) returns the direction (empty when the step queried nothing). */
inline UpdateCheck expected_update_check(const std::function<Vec(Rng&)>& draw, const Vec& target, std::size_t n_draws,
                                         Rng rng) {
    if (n_draws < 2) throw std::invalid_argument("expected_update_check: need at least 2 draws");
    const std::size_t d = target.size();
    Vec s(d, 0.0), s2(d, 0.0);
    for (std::size_t k = 0; k < n_draws; ++k) {
        const Vec g = draw(rng);
        if (g.empty()) continue;
        require_same_size(g.size(), d, "expected_update_check");
        for (std::size_t j = 0; j < d; ++j) {
            s[j] += g[j];
            s2[j] += g[j] * g[j];
        }
    }
    UpdateCheck out;
    out.target = target;
    out.mean.resize(d);
    out.stderr_.resize(d);
    out.z.resize(d);
    const double n = static_cast<double>(n_draws);
    for (std::size_t j = 0; j < d; ++j) {
        out.mean[j] = s[j] / n;
        const double var = std::max(0.0, (s2[j] - n * out.mean[j] * out.mean[j]) / (n - 1.0));
        out.stderr_[j] = std::sqrt(var / n);
        const double diff = out.mean[j] - target[j];
        if (out.stderr_[j] > 0.0)
            out.z[j] = diff / out.stderr_[j];
        else
            out.z[j] = std::abs(diff) <= 1e-12 * std::max(1.0, std::abs(target[j])) ? 0.0 : INFINITY;
        out.max_abs_z = std::max(out.max_abs_z, std::abs(out.z[j]));
    }
    return out;
}

// Effective sampling law of the mixture sampler at frozen uncertainties: (1 - g)/n + g 1{i in top-m}/m.
inline Vec mixture_sampling_law(std::span<const double> u, std::size_t m, double gamma) {
    const std::size_t n = u.size();
    Vec p(n, (1.0 - gamma) / static_cast<double>(n));
    for (std::size_t i : top_indices(u, m)) p[i] += gamma / static_cast<double>(m);
    return p;
}

// D_phi(p || q) = sum q phi(p / q) with phi(z) = (z - 1)^2 / 2.
inline double chi2_divergence(std::span<const double> p, std::span<const double> q) {
    require_same_size(p.size(), q.size(), "chi2_divergence");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(q[i] > 0.0)) throw std::invalid_argument("chi2_divergence: q must be positive");
        const double r = p[i] / q[i] - 1.0;
        acc += 0.5 * q[i] * r * r;
    }
    return acc;
}

struct AmbiguityParams {
    double gamma = 0.5;
    std::size_t m = 1;
    std::size_t n = 1;

    double radius() const {
        const double dn = static_cast<double>(n), dm = static_cast<double>(m);
        return gamma * gamma * dn * (dn - dm) / (2.0 * dn * dm);
    }
    double cap() const {
        const double dn = static_cast<double>(n), dm = static_cast<double>(m);
        return (dm + (dn - dm) * gamma) / (dm * dn);
    }
};

}  // namespace eqloss
