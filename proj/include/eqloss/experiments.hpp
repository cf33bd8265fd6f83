#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "data_io.hpp"
#include "equivalent_loss.hpp"
#include "link_functions.hpp"
#include "mixture.hpp"
#include "models.hpp"
#include "numerics.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "uncertainty.hpp"

namespace eqloss {

inline constexpr std::string_view version = "1.0.0";

using json = nlohmann::json;

// ---- helpers shared by the drivers and tests -----------------------------------

/** Full-batch gradient descent with Armijo backtracking. */
inline Vec gradient_descent(const std::function<double(std::span<const double>)>& f,
                            const std::function<Vec(std::span<const double>)>& grad, Vec theta,
                            std::size_t iters, double grad_tol = 1e-10) {
    double t = 1.0;
    for (std::size_t k = 0; k < iters; ++k) {
        const Vec g = grad(theta);
        const double gg = dot(g, g);
        if (std::sqrt(gg) < grad_tol) break;
        const double f0 = f(theta);
        t = std::min(t * 2.0, 1e3);
        Vec cand(theta.size());
        for (;;) {
            for (std::size_t j = 0; j < theta.size(); ++j) cand[j] = theta[j] - t * g[j];
            if (f(cand) <= f0 - 0.5 * t * gg || t < 1e-14) break;
            t *= 0.5;
        }
        if (t < 1e-14) break;
        theta = cand;
    }
    return theta;
}

// Empirical mean objective and gradient over a dataset.
struct EmpiricalObjective {
    std::function<double(std::span<const double>)> value;
    std::function<Vec(std::span<const double>)> grad;
};

inline EmpiricalObjective original_objective(const LossSpec& spec, const Matrix& X, const Vec& y) {
    return {[=](std::span<const double> th) {
                double s = 0.0;
                for (std::size_t i = 0; i < X.rows; ++i) s += loss(spec, th, X.row(i), y[i]);
                return s / static_cast<double>(X.rows);
            },
            [=](std::span<const double> th) {
                Vec g(th.size(), 0.0), gi(th.size());
                for (std::size_t i = 0; i < X.rows; ++i) {
                    loss_grad(spec, th, X.row(i), y[i], gi);
                    axpy(1.0, gi, g);
                }
                for (double& v : g) v /= static_cast<double>(X.rows);
                return g;
            }};
}

// Gradient of l~ in theta is U(theta; x) times the gradient of l.
inline EmpiricalObjective equivalent_objective(const PairSpec& pair, const Matrix& X, const Vec& y) {
    return {[=](std::span<const double> th) {
                double s = 0.0;
                for (std::size_t i = 0; i < X.rows; ++i) s += equivalent_loss(pair, th, X.row(i), y[i]);
                return s / static_cast<double>(X.rows);
            },
            [=](std::span<const double> th) {
                Vec g(th.size(), 0.0), gi(th.size());
                for (std::size_t i = 0; i < X.rows; ++i) {
                    loss_grad(pair.loss, th, X.row(i), y[i], gi);
                    axpy(uncertainty(pair.unc, pair.loss, th, X.row(i)), gi, g);
                }
                for (double& v : g) v /= static_cast<double>(X.rows);
                return g;
            }};
}

// Unit vector with a positive first nonzero coordinate (zero stays zero).
inline Vec canonical_direction(std::span<const double> v) {
    Vec u(v.begin(), v.end());
    const double n = norm2(u);
    if (n == 0.0) return u;
    for (double& c : u) c /= n;
    for (double c : u)
        if (c != 0.0) {
            if (c < 0.0)
                for (double& w : u) w = -w;
            break;
        }
    return u;
}

// Angle in degrees between the lines spanned by a and b.
inline double line_angle_deg(std::span<const double> a, std::span<const double> b) {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 90.0;
    // 2 atan2(|u - v|, |u + v|) stays accurate near 0 and 180 where acos does not
    double d2 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double u = a[i] / na, v = b[i] / nb;
        d2 += (u - v) * (u - v);
        s2 += (u + v) * (u + v);
    }
    const double ang = 2.0 * std::atan2(std::sqrt(d2), std::sqrt(s2)) * 180.0 / std::numbers::pi;
    return std::min(ang, 180.0 - ang);
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
    return splitmix64(seed ^ splitmix64(0x747269616cULL + trial));
}

inline std::size_t thread_budget() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("EQLOSS_THREADS")) {
        const auto v = parse_double(env);
        if (v && *v >= 1.0) n = static_cast<std::size_t>(*v);
    }
    return n;
}

/** fn(i) for i in [0, n) on up to `threads` workers; results kept in index order and the
 *  first exception (by index) rethrown. */
template <class R>
std::vector<R> parallel_map(std::size_t n, std::size_t threads, const std::function<R(std::size_t)>& fn) {
    std::vector<std::optional<R>> out(n);
    std::vector<std::exception_ptr> err(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                out[i].emplace(fn(i));
            } catch (...) {
                err[i] = std::current_exception();
            }
        }
    };
    const std::size_t w = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < w; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : err)
        if (e) std::rethrow_exception(e);
    std::vector<R> res;
    res.reserve(n);
    for (auto& o : out) res.push_back(std::move(*o));
    return res;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream o;
    o << std::hex;
    o.width(16);
    o.fill('0');
    o << v;
    return o.str();
}

// ---- configuration -------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"boundary",    "active_vs_passive", "regression_curves",
                                                "eqloss_table", "psi_table",         "variant_checks"};
    return names;
}

inline json default_config(const std::string& command) {
    json c = {{"experiment", command}, {"seed", 20240601}, {"trials", 1}};
    if (command == "boundary") {
        c["trials"] = 10;
        c["pairs"] = {"entropy_cross_entropy", "margin_squared_margin"};
        c["param"] = 0.5;
        c["n"] = 2000;
        c["T"] = 1000000;
        c["eta"] = 1e-3;
        c["gd_iters"] = 3000;
        c["radius"] = 10.0;
    } else if (command == "active_vs_passive" || command == "regression_curves") {
        const bool reg = command == "regression_curves";
        c["trials"] = 30;
        c["source"] = reg ? "regression" : "mixture";
        c["n_pool"] = 400;
        c["n_test"] = 2000;
        c["loss"] = reg ? "squared_error" : "cross_entropy";
        c["uncertainty"] = reg ? "oracle_loss" : "oracle_loss";
        c["k"] = 0;
        c["T"] = 500;
        c["eta"] = reg ? 0.05 : 0.1;
        c["radius"] = 10.0;
        c["scaling"] = "none";
        c["metric_stride"] = 1;
        c["metric_iterate"] = "average";
        c["save_runs"] = false;
        c["regression"] = {{"weights", {1.0, -0.5}}, {"bias", 0.0}, {"noise_std", 0.1}, {"box", 1.0}};
        c["kernel"] = reg ? json{{"kind", "rbf"}, {"anchors", 100}} : json();
        c["csv"] = json();
    } else if (command == "eqloss_table") {
        c["pairs"] = {"entropy_cross_entropy", "least_confidence_cross_entropy", "margin_squared_margin",
                      "threshold_logistic",    "margin_hinge",                   "exponential_exponential"};
        c["param"] = 0.5;
        c["threshold_gamma"] = 1.5;
        c["grid"] = 2001;
        c["s_range"] = {-5.0, 5.0};
        c["tolerance"] = 1e-8;
    } else if (command == "psi_table") {
        c["pairs"] = {"entropy_cross_entropy", "least_confidence_cross_entropy", "margin_squared_margin",
                      "threshold_logistic",    "margin_hinge",                   "exponential_exponential"};
        c["param"] = 0.5;
        c["threshold_gamma"] = 1.5;
        c["grid"] = 4097;
        c["z_max"] = 0.99;
        c["out_points"] = 100;
    } else if (command == "variant_checks") {
        c["n"] = 50;
        c["draws"] = 100000;
        c["theta"] = {0.4, -0.3};
        c["mu"] = 0.5;
        c["m"] = 10;
        c["gamma_mix"] = 0.5;
        c["z_limit"] = 4.0;
        c["dro"] = {{"n", 10}, {"m", 2}, {"gamma", 0.5}};
    } else {
        throw ConfigError("unknown command '" + command + "'");
    }
    return c;
}

template <class T>
T cfg(const json& c, const char* key) {
    if (!c.contains(key)) throw ConfigError(std::string("config: missing key '") + key + "'");
    try {
        return c.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

inline double cfg_radius(const json& c) {
    return c.contains("radius") && !c["radius"].is_null() ? cfg<double>(c, "radius")
                                                           : std::numeric_limits<double>::infinity();
}

// ---- command plumbing ----------------------------------------------------------

struct CommandOutput {
    std::vector<std::string> files;  // relative to the output directory
    json summary;
    json failures = json::array();

    void fail(const std::string& check, const std::string& detail) {
        failures.push_back({{"check", check}, {"detail", detail}});
    }
};

struct CommandContext {
    std::string command;
    json config;
    std::filesystem::path out;
    std::size_t threads = 1;

    std::uint64_t seed() const { return cfg<std::uint64_t>(config, "seed"); }
    std::size_t trials() const { return cfg<std::size_t>(config, "trials"); }
    std::filesystem::path file(const std::string& name) const { return out / name; }
};

// ---- boundary ------------------------------------------------------------------

inline CommandOutput cmd_boundary(const CommandContext& ctx) {
    const json& c = ctx.config;
    const auto n = cfg<std::size_t>(c, "n");
    const auto T = cfg<std::size_t>(c, "T");
    const double eta = cfg<double>(c, "eta");
    const auto gd_iters = cfg<std::size_t>(c, "gd_iters");
    const double radius = cfg_radius(c);
    const double param = cfg<double>(c, "param");
    std::vector<PairId> pairs;
    for (const auto& s : cfg<std::vector<std::string>>(c, "pairs")) {
        const auto id = pair_from_string(s);
        if (!id) throw ConfigError("boundary: unknown pair '" + s + "'");
        pairs.push_back(*id);
    }
    const GaussianMixtureSpec mix = four_gaussian_mixture();

    struct TrialResult {
        std::vector<std::pair<std::string, Vec>> dirs;  // "<pair>/<method>" -> direction
        std::vector<std::pair<std::string, double>> angles;
        std::size_t queries = 0;
    };
    const std::size_t trials = ctx.trials();
    const auto results = parallel_map<std::vector<TrialResult>>(trials, ctx.threads, [&](std::size_t k) {
        const std::uint64_t ts = trial_seed(ctx.seed(), k);
        const Dataset data = sample_mixture(mix, n, ts);
        std::vector<TrialResult> per_pair;
        for (PairId id : pairs) {
            const PairSpec pair = make_pair(id, param);
            Rng init_rng = Rng(ts).substream(5);
            const Vec theta1 = initial_theta(data.X.cols, radius, init_rng);
            const auto orig = original_objective(pair.loss, data.X, data.y);
            const auto eq = equivalent_objective(pair, data.X, data.y);
            const Vec th_orig = gradient_descent(orig.value, orig.grad, theta1, gd_iters);
            const Vec th_eq = gradient_descent(eq.value, eq.grad, theta1, gd_iters);
            AlgorithmSpec spec;
            spec.kind = AlgorithmKind::stream;
            spec.T = T;
            spec.eta = eta;
            spec.seed = ts;
            spec.radius = radius;
            spec.log_stride = std::max<std::size_t>(T, 1);
            spec.snapshot_stride = std::max<std::size_t>(T, 1);
            const DatasetStream stream(data.X, data.y);
            const RunRecord rec =
                run_stream(spec, pair.loss, bind_uncertainty(pair.unc, pair.loss), stream, theta1);
            TrialResult r;
            const std::string p(to_string(id));
            r.dirs = {{p + "/original_gd", canonical_direction(th_orig)},
                      {p + "/equivalent_gd", canonical_direction(th_eq)},
                      {p + "/uncertainty_sampling", canonical_direction(rec.theta_bar)}};
            r.angles = {{p + "/us_vs_equivalent_gd", line_angle_deg(rec.theta_bar, th_eq)},
                        {p + "/us_vs_original_gd", line_angle_deg(rec.theta_bar, th_orig)},
                        {p + "/equivalent_vs_original_gd", line_angle_deg(th_eq, th_orig)}};
            r.queries = rec.queries;
            per_pair.push_back(std::move(r));
        }
        return per_pair;
    });

    CommandOutput out;
    {
        std::ofstream b(ctx.file("boundaries.csv"), std::ios::binary);
        b << "trial,pair,method,theta1,theta2\n";
        std::ofstream a(ctx.file("angles.csv"), std::ios::binary);
        a << "trial,pair,comparison,angle_deg\n";
        for (std::size_t k = 0; k < trials; ++k)
            for (const auto& r : results[k]) {
                for (const auto& [name, v] : r.dirs) {
                    const auto slash = name.find('/');
                    b << k << ',' << name.substr(0, slash) << ',' << name.substr(slash + 1);
                    for (double x : v) b << ',' << format_double(x);
                    b << '\n';
                }
                for (const auto& [name, ang] : r.angles) {
                    const auto slash = name.find('/');
                    a << k << ',' << name.substr(0, slash) << ',' << name.substr(slash + 1) << ','
                      << format_double(ang) << '\n';
                }
            }
    }
    out.files = {"boundaries.csv", "angles.csv"};
    json summ = json::object();
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        double s_eq = 0, s_or = 0, s_eo = 0, q = 0;
        for (std::size_t k = 0; k < trials; ++k) {
            s_eq += results[k][p].angles[0].second;
            s_or += results[k][p].angles[1].second;
            s_eo += results[k][p].angles[2].second;
            q += static_cast<double>(results[k][p].queries);
        }
        const double tt = static_cast<double>(trials);
        for (std::size_t k = 0; k < trials; ++k)
            for (const auto& [name, v] : results[k][p].dirs)
                if (!all_finite(v)) out.fail("finite_boundary", name + " in trial " + std::to_string(k));
        summ[std::string(to_string(pairs[p]))] = {{"mean_angle_us_vs_equivalent_gd", s_eq / tt},
                                                  {"mean_angle_us_vs_original_gd", s_or / tt},
                                                  {"mean_angle_equivalent_vs_original_gd", s_eo / tt},
                                                  {"us_closer_to_equivalent", s_eq < s_or},
                                                  {"mean_queries", q / tt},
                                                  {"arrivals", T}};
    }
    out.summary = summ;
    return out;
}

// ---- active vs passive / regression curves -------------------------------------

namespace detail {

struct LearningProblem {
    LossSpec loss;
    Task task = Task::binary;
    std::optional<OracleDistribution> oracle;
    Matrix pool_keys;
    Vec pool_y;  // stored labels (dataset pools)
    Matrix test_keys;
    Vec test_y;
    std::optional<KernelFeatureMap> kernel;
    Matrix pool_inputs, test_inputs;
    json metadata;
};

inline LossSpec loss_from_config(const json& c, Task task, std::size_t classes) {
    const auto name = cfg<std::string>(c, "loss");
    const auto k = loss_kind_from_string(name);
    if (!k) throw ConfigError("unknown loss '" + name + "'");
    if (task_of(*k) != task) throw ConfigError("loss '" + name + "' does not fit task " + std::string(to_string(task)));
    return {*k, task == Task::multiclass ? classes : 2};
}

inline LearningProblem build_problem(const json& c, std::uint64_t ts) {
    LearningProblem p;
    const auto source = cfg<std::string>(c, "source");
    if (source == "mixture") {
        const GaussianMixtureSpec mix = four_gaussian_mixture();
        p.oracle.emplace(mix);
        const Dataset pool = sample_mixture(mix, cfg<std::size_t>(c, "n_pool"), splitmix64(ts ^ 1));
        const Dataset test = sample_mixture(mix, cfg<std::size_t>(c, "n_test"), splitmix64(ts ^ 2));
        p.task = Task::binary;
        p.pool_keys = pool.X;
        p.pool_y = pool.y;
        p.test_keys = test.X;
        p.test_y = test.y;
        p.metadata = {{"source", "gaussian_mixture"}, {"repeated_query_labels", "fresh"}};
    } else if (source == "regression") {
        const json& r = c.at("regression");
        RegressionOracle ro{cfg<Vec>(r, "weights"), cfg<double>(r, "bias"), cfg<double>(r, "noise_std"),
                            cfg<double>(r, "box")};
        p.oracle.emplace(ro);
        p.task = Task::regression;
        Rng rng = Rng(ts).substream(6);
        auto draw = [&](std::size_t n, Matrix& X, Vec& y) {
            X = Matrix(n, ro.weights.size());
            for (std::size_t i = 0; i < n; ++i) {
                const Vec x = draw_features(*p.oracle, rng);
                std::copy(x.begin(), x.end(), X.row(i).begin());
                y.push_back(draw_label(*p.oracle, x, rng));
            }
        };
        draw(cfg<std::size_t>(c, "n_pool"), p.pool_keys, p.pool_y);
        draw(cfg<std::size_t>(c, "n_test"), p.test_keys, p.test_y);
        p.metadata = {{"source", "regression_oracle"}, {"repeated_query_labels", "fresh"}};
    } else if (source == "csv") {
        const json& cc = c.at("csv");
        CsvSchema schema;
        schema.label_column = cc.value("label_column", std::string("label"));
        const auto task = task_from_string(cc.value("task", std::string("binary")));
        if (!task) throw ConfigError("csv: unknown task");
        schema.task = *task;
        schema.classes = cc.value("classes", std::vector<std::string>{});
        if (cc.contains("positive_label") && !cc["positive_label"].is_null())
            schema.positive_label = cc["positive_label"].get<std::string>();
        schema.subsample = cc.value("subsample", std::size_t{0});
        schema.standardize = cc.value("standardize", true);
        schema.split = cc.value("split", 0.8);
        const auto path = cfg<std::string>(cc, "path");
        const SplitResult sr = load_csv(path, schema, ts);
        p.task = schema.task;
        p.pool_keys = sr.train.X;
        p.pool_y = sr.train.y;
        p.test_keys = sr.test.X;
        p.test_y = sr.test.y;
        p.metadata = split_metadata(sr, schema);
        p.metadata["no_leakage"] = true;
    } else {
        throw ConfigError("unknown source '" + source + "'");
    }
    std::size_t classes = 2;
    if (p.task == Task::multiclass)
        for (double v : p.pool_y) classes = std::max(classes, static_cast<std::size_t>(v));
    p.loss = loss_from_config(c, p.task, classes);
    if (c.contains("kernel") && !c["kernel"].is_null()) {
        const json& kc = c["kernel"];
        const auto kind = kernel_kind_from_string(kc.value("kind", std::string("rbf")));
        if (!kind) throw ConfigError("unknown kernel kind");
        const std::size_t na = std::min<std::size_t>(kc.value("anchors", std::size_t{100}), p.pool_keys.rows);
        Matrix anchors(na, p.pool_keys.cols);
        std::copy(p.pool_keys.data.begin(), p.pool_keys.data.begin() + static_cast<std::ptrdiff_t>(na * p.pool_keys.cols),
                  anchors.data.begin());
        p.kernel.emplace(KernelFeatureMap::with_median_bandwidth(*kind, std::move(anchors)));
        if (kc.contains("bandwidth")) {
            Kernel k = p.kernel->kernel();
            k.bandwidth = kc["bandwidth"].get<double>();
            p.kernel.emplace(k, p.kernel->anchors());
        }
        p.pool_inputs = p.kernel->map_all(p.pool_keys);
        p.test_inputs = p.kernel->map_all(p.test_keys);
        p.metadata["kernel"] = {{"kind", std::string(to_string(*kind))},
                                {"anchors", na},
                                {"bandwidth", p.kernel->kernel().bandwidth}};
    } else {
        p.pool_inputs = p.pool_keys;
        p.test_inputs = p.test_keys;
    }
    return p;
}

// Accuracy for classification, mean squared error for regression.
inline double test_metric(const LearningProblem& p, std::span<const double> theta) {
    double acc = 0.0;
    const std::size_t n = p.test_inputs.rows;
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = p.test_inputs.row(i);
        const double y = p.test_y[i];
        switch (p.task) {
            case Task::binary: acc += ((dot(theta, x) >= 0.0 ? 1.0 : -1.0) == y) ? 1.0 : 0.0; break;
            case Task::multiclass: {
                const Vec s = class_scores(theta, x, p.loss.classes);
                const auto k = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
                acc += static_cast<double>(k + 1) == y ? 1.0 : 0.0;
                break;
            }
            case Task::regression: {
                const double r = dot(theta, x) - y;
                acc += r * r;
                break;
            }
        }
    }
    return acc / static_cast<double>(n);
}

}  // namespace detail

inline CommandOutput cmd_active_vs_passive(const CommandContext& ctx) {
    const json& c = ctx.config;
    const auto T = cfg<std::size_t>(c, "T");
    const double eta = cfg<double>(c, "eta");
    const double radius = cfg_radius(c);
    const auto stride = std::max<std::size_t>(1, cfg<std::size_t>(c, "metric_stride"));
    const bool use_bar = cfg<std::string>(c, "metric_iterate") == "average";
    const auto scaling = pool_step_scaling_from_string(cfg<std::string>(c, "scaling"));
    if (!scaling) throw ConfigError("unknown pool step scaling");
    const auto unc_name = cfg<std::string>(c, "uncertainty");
    const bool uniform_active = unc_name == "uniform";
    std::optional<UncertaintyKind> unc_kind;
    if (!uniform_active) {
        unc_kind = uncertainty_kind_from_string(unc_name);
        if (!unc_kind) throw ConfigError("unknown uncertainty '" + unc_name + "'");
    }
    const bool save_runs = c.value("save_runs", false);
    if (save_runs) std::filesystem::create_directories(ctx.file("runs"));

    struct Curve {
        std::vector<MetricPoint> active, passive;
        std::size_t active_queries = 0;
        json metadata;
        std::string active_json, passive_json;
    };
    const std::size_t trials = ctx.trials();
    const auto curves = parallel_map<Curve>(trials, ctx.threads, [&](std::size_t k) {
        const std::uint64_t ts = trial_seed(ctx.seed(), k);
        const detail::LearningProblem p = detail::build_problem(c, ts);
        if (unc_kind == UncertaintyKind::oracle_loss || unc_kind == UncertaintyKind::exp_oracle_loss) {
            if (!p.oracle) throw ConfigError("uncertainty '" + unc_name + "' needs a synthetic oracle source");
        }
        std::optional<OraclePool> opool;
        std::optional<DatasetPool> dpool;
        if (p.oracle)
            opool.emplace(*p.oracle, p.pool_keys, p.pool_inputs);
        else
            dpool.emplace(p.pool_keys, p.pool_y, p.pool_inputs);
        const PoolSource& pool = opool ? static_cast<const PoolSource&>(*opool) : *dpool;

        Rng init_rng = Rng(ts).substream(5);
        const Vec theta1 = initial_theta(param_dim(p.loss, p.pool_inputs.cols), radius, init_rng);
        AlgorithmSpec spec;
        spec.kind = AlgorithmKind::pool;
        spec.T = T;
        spec.eta = eta;
        spec.radius = radius;
        spec.scaling = *scaling;
        spec.seed = ts;
        RunHooks hooks;
        hooks.metric_stride = stride;
        hooks.metric = [&](std::span<const double> th, std::span<const double> bar) {
            return std::pair{0.0, detail::test_metric(p, use_bar ? bar : th)};
        };

        LossCalibrator cal(c.value("k", std::size_t{0}));
        UncertaintyModel active_unc = UncertaintyModel::constant(1.0);
        RunHooks active_hooks = hooks;
        if (!uniform_active) {
            UncertaintySpec us;
            us.kind = *unc_kind;
            us.mu = c.value("mu", 1.0);
            us.gamma = c.value("gamma", 1.0);
            us.k = c.value("k", std::size_t{0});
            UncertaintyContext uctx{p.oracle ? &*p.oracle : nullptr, &cal};
            active_unc = bind_uncertainty(us, p.loss, uctx);
            active_hooks.on_label = [&](std::span<const double> key, std::span<const double> input, double y) {
                cal.append(key, input, y);
            };
        }
        Curve cv;
        const RunRecord a = run_pool(spec, p.loss, active_unc, pool, theta1, active_hooks);
        const RunRecord b = run_pool(spec, p.loss, UncertaintyModel::constant(1.0), pool, theta1, hooks);
        cv.active = a.metrics;
        cv.passive = b.metrics;
        cv.active_queries = a.queries;
        cv.metadata = p.metadata;
        if (save_runs) {
            cv.active_json = to_json(a).dump();
            cv.passive_json = to_json(b).dump();
        }
        return cv;
    });

    CommandOutput out;
    const bool regression = detail::build_problem(c, trial_seed(ctx.seed(), 0)).task == Task::regression;
    const std::string metric_name = regression ? "mse" : "accuracy";
    {
        std::ofstream f(ctx.file("curves.csv"), std::ios::binary);
        f << "step,trial,method,queries," << metric_name << '\n';
        for (std::size_t k = 0; k < trials; ++k)
            for (const auto& [name, pts] : {std::pair{"active", &curves[k].active}, std::pair{"passive", &curves[k].passive}})
                for (const auto& m : *pts) {
                    if (m.step == 1) continue;  // initial point
                    f << m.step - 1 << ',' << k << ',' << name << ',' << m.queries << ',' << format_double(m.test) << '\n';
                }
    }
    out.files.push_back("curves.csv");
    if (save_runs)
        for (std::size_t k = 0; k < trials; ++k)
            for (const auto& [name, body] :
                 {std::pair{"active", &curves[k].active_json}, std::pair{"passive", &curves[k].passive_json}}) {
                const std::string rel = "runs/trial" + std::to_string(k) + "_" + name + ".json";
                std::ofstream f(ctx.file(rel), std::ios::binary);
                f << *body << '\n';
                out.files.push_back(rel);
            }
    {
        json meta = json::array();
        for (std::size_t k = 0; k < trials; ++k) meta.push_back(curves[k].metadata);
        write_json(ctx.file("splits.json"), meta);
        out.files.push_back("splits.json");
    }

    json mean_curves = json::object();
    std::vector<double> diffs;
    for (const char* method : {"active", "passive"}) {
        json arr = json::array();
        const auto& first = std::string(method) == "active" ? curves[0].active : curves[0].passive;
        for (std::size_t j = 0; j < first.size(); ++j) {
            if (first[j].step == 1) continue;
            double s = 0.0;
            for (std::size_t k = 0; k < trials; ++k)
                s += (std::string(method) == "active" ? curves[k].active : curves[k].passive)[j].test;
            arr.push_back({first[j].step - 1, s / static_cast<double>(trials)});
        }
        mean_curves[method] = arr;
    }
    for (std::size_t k = 0; k < trials; ++k) {
        diffs.push_back(curves[k].active.back().test - curves[k].passive.back().test);
        if (!std::isfinite(curves[k].active.back().test) || !std::isfinite(curves[k].passive.back().test))
            out.fail("finite_metric", "trial " + std::to_string(k));
    }
    double md = 0.0, sd = 0.0;
    for (double d : diffs) md += d;
    md /= static_cast<double>(diffs.size());
    for (double d : diffs) sd += (d - md) * (d - md);
    const double se = diffs.size() > 1 ? std::sqrt(sd / static_cast<double>(diffs.size() - 1) / static_cast<double>(diffs.size())) : 0.0;
    double fa = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < trials; ++k) {
        fa += curves[k].active.back().test;
        fp += curves[k].passive.back().test;
    }
    out.summary = {{"metric", metric_name},
                   {"mean_curves", mean_curves},
                   {"final_active", fa / static_cast<double>(trials)},
                   {"final_passive", fp / static_cast<double>(trials)},
                   {"paired_difference_mean", md},
                   {"paired_difference_se", se},
                   {"uncertainty", unc_name}};
    return out;
}

// ---- golden tables -------------------------------------------------------------

namespace detail {

inline PairSpec pair_from_config(const json& c, PairId id) {
    return make_pair(id, id == PairId::threshold_logistic ? cfg<double>(c, "threshold_gamma") : cfg<double>(c, "param"));
}

inline std::vector<PairId> pairs_from_config(const json& c) {
    std::vector<PairId> ids;
    for (const auto& s : cfg<std::vector<std::string>>(c, "pairs")) {
        const auto id = pair_from_string(s);
        if (!id) throw ConfigError("unknown pair '" + s + "'");
        ids.push_back(*id);
    }
    return ids;
}

}  // namespace detail

inline CommandOutput cmd_eqloss_table(const CommandContext& ctx) {
    const json& c = ctx.config;
    const auto grid = cfg<std::size_t>(c, "grid");
    const auto range = cfg<std::vector<double>>(c, "s_range");
    const double tol = cfg<double>(c, "tolerance");
    if (range.size() != 2 || !(range[0] < range[1])) throw ConfigError("s_range must be [lo, hi]");
    const auto ids = detail::pairs_from_config(c);

    struct Rows {
        std::string text;
        double max_diff = 0.0;
    };
    const auto rows = parallel_map<Rows>(ids.size() * 2, ctx.threads, [&](std::size_t job) {
        const PairId id = ids[job / 2];
        const double y = job % 2 == 0 ? 1.0 : -1.0;
        const PairSpec pair = detail::pair_from_config(c, id);
        const auto pts = is_probabilistic(id) ? linspace(q_domain_lo, q_domain_hi, grid) : linspace(range[0], range[1], grid);
        Rows r;
        std::ostringstream o;
        for (double a : pts) {
            const double closed = equivalent_loss_closed(pair, y, a);
            const double numeric = equivalent_loss_numeric(pair, y, a);
            const double d = std::abs(closed - numeric);
            r.max_diff = std::max(r.max_diff, d);
            o << to_string(id) << ',' << (y > 0 ? "+1" : "-1") << ',' << format_double(a) << ','
              << format_double(closed) << ',' << format_double(numeric) << ',' << format_double(d) << '\n';
        }
        r.text = o.str();
        return r;
    });
    CommandOutput out;
    std::ofstream f(ctx.file("eqloss_table.csv"), std::ios::binary);
    f << "pair,y,arg,closed_form,quadrature,abs_diff\n";
    json summ = json::object();
    for (std::size_t j = 0; j < rows.size(); ++j) {
        f << rows[j].text;
        const std::string key = std::string(to_string(ids[j / 2])) + (j % 2 == 0 ? "/+1" : "/-1");
        summ[key] = rows[j].max_diff;
        if (!(rows[j].max_diff <= tol))
            out.fail("eqloss_golden", key + ": max |closed - quadrature| = " + format_double(rows[j].max_diff));
    }
    out.files.push_back("eqloss_table.csv");
    out.summary = {{"max_abs_diff", summ}, {"tolerance", tol}, {"grid_per_branch", grid}};
    return out;
}

inline CommandOutput cmd_psi_table(const CommandContext& ctx) {
    const json& c = ctx.config;
    const auto grid = cfg<std::size_t>(c, "grid");
    const double z_max = cfg<double>(c, "z_max");
    const auto npts = cfg<std::size_t>(c, "out_points");
    const auto ids = detail::pairs_from_config(c);

    struct PairResult {
        std::string text;
        json summary;
        std::vector<std::string> failures;
    };
    const auto res = parallel_map<PairResult>(ids.size(), ctx.threads, [&](std::size_t j) {
        const PairId id = ids[j];
        const PairSpec pair = detail::pair_from_config(c, id);
        const PsiNumeric num = psi_numeric(pair, grid);
        const auto link = num.link();
        const bool has_closed = !(id == PairId::exponential_exponential && pair.unc.mu == 1.0);
        PairResult r;
        std::ostringstream o;
        double sup = 0.0;
        for (std::size_t i = 0; i < num.z.size(); ++i) {
            if (num.z[i] > z_max + 1e-15) break;
            if (has_closed) sup = std::max(sup, std::abs(num.envelope(num.z[i]) - psi_closed(pair, num.z[i])));
        }
        for (double z : linspace(0.0, z_max, npts)) {
            o << to_string(id) << ',' << format_double(z) << ','
              << (has_closed ? format_double(psi_closed(pair, z)) : std::string("nan")) << ','
              << format_double(link(z)) << '\n';
        }
        r.text = o.str();
        const TaylorResult tn = taylor_coefficient(link);
        json s = {{"sup_norm_vs_closed_form", has_closed ? json(sup) : json()},
                  {"taylor_numeric", {{"linear", tn.linear}, {"value", tn.value}}},
                  {"saturated_grid_points", num.saturated}};
        if (has_closed) {
            const TaylorResult tc = taylor_coefficient(psi_closed_link(pair));
            s["taylor_closed_form"] = {{"linear", tc.linear}, {"value", tc.value}};
        }
        if (id == PairId::threshold_logistic) {
            s["kink_closed_form"] = threshold_z0(pair.unc.gamma);
            s["envelope_final_segment_start"] = final_segment_start(num.envelope);
        }
        // pipeline sanity: psi(0) = 0, nondecreasing, positive away from 0
        if (std::abs(link(0.0)) > 1e-9) r.failures.push_back("psi(0) = " + format_double(link(0.0)));
        double prev = -1.0;
        for (double z : linspace(0.0, 1.0, 1001)) {
            const double v = link(z);
            if (v < prev - 1e-12) {
                r.failures.push_back("psi decreasing at z = " + format_double(z));
                break;
            }
            prev = v;
        }
        if (!is_classification_calibrated(link)) r.failures.push_back("psi not positive on (0, 1]");
        r.summary = s;
        return r;
    });
    CommandOutput out;
    std::ofstream f(ctx.file("psi_table.csv"), std::ios::binary);
    f << "pair,z,psi_closed_form,psi_numeric\n";
    json summ = json::object();
    for (std::size_t j = 0; j < ids.size(); ++j) {
        f << res[j].text;
        summ[std::string(to_string(ids[j]))] = res[j].summary;
        for (const auto& msg : res[j].failures) out.fail("psi_pipeline", std::string(to_string(ids[j])) + ": " + msg);
    }
    out.files.push_back("psi_table.csv");
    out.summary = summ;
    return out;
}

// ---- variant checks ------------------------------------------------------------

struct VariantCheck {
    std::string name;
    UpdateCheck result;
};

/** Frozen-theta Monte-Carlo checks of the expected one-step update of each algorithm
 *  against the gradient of the objective it is claimed to descend. */
inline std::vector<VariantCheck> run_variant_checks(const json& c, std::uint64_t seed, std::size_t threads) {
    const auto n = cfg<std::size_t>(c, "n");
    const auto draws = cfg<std::size_t>(c, "draws");
    const Vec theta = cfg<Vec>(c, "theta");
    const double mu = cfg<double>(c, "mu");
    const auto m = cfg<std::size_t>(c, "m");
    const double gmix = cfg<double>(c, "gamma_mix");
    if (theta.size() != 2) throw ConfigError("variant_checks: theta must have 2 entries");
    if (m < 1 || m > n) throw ConfigError("variant_checks: need 1 <= m <= n");

    const OracleDistribution dist(four_gaussian_mixture());
    const Dataset pts = sample_mixture(four_gaussian_mixture(), n, seed);
    const Matrix& X = pts.X;
    const LossSpec ce{LossKind::cross_entropy};
    const OraclePool pool(dist, X);
    const double h = 1e-6;

    auto cond = [&](std::span<const double> th, std::size_t i) { return conditional_loss(dist, ce, th, X.row(i)); };
    auto Lvec = [&](std::span<const double> th) {
        Vec L(n);
        for (std::size_t i = 0; i < n; ++i) L[i] = cond(th, i);
        return L;
    };

    UncertaintySpec oracle_spec{UncertaintyKind::oracle_loss};
    UncertaintySpec exp_spec{UncertaintyKind::exp_oracle_loss};
    const UncertaintyModel u_oracle = bind_uncertainty(oracle_spec, ce, {&dist, nullptr});
    const UncertaintyModel u_exp = bind_uncertainty(exp_spec, ce, {&dist, nullptr});

    using Job = std::function<VariantCheck(std::size_t)>;
    std::vector<Job> jobs;

    // streaming sampler, margin / squared-margin pair over the pool as a finite-support stream.
    jobs.push_back([&](std::size_t k) {
        const PairSpec pair = make_pair(PairId::margin_squared_margin, mu);
        const FiniteSupportStream src(X, Vec(n, 1.0 / static_cast<double>(n)), dist);
        const UncertaintyModel unc = bind_uncertainty(pair.unc, pair.loss);
        const Vec target = finite_diff_grad(
            [&](std::span<const double> th) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = posterior(dist, X.row(i));
                    s += p * equivalent_loss(pair, th, X.row(i), 1.0) + (1 - p) * equivalent_loss(pair, th, X.row(i), -1.0);
                }
                return s / static_cast<double>(n);
            },
            theta, h);
        auto draw = [&](Rng& r) {
            return stream_update(pair.loss, unc, src, theta, r, r, r).direction;
        };
        return VariantCheck{"stream_equivalent_loss", expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
    });
    // streaming sampler with the oracle conditional loss as uncertainty.
    jobs.push_back([&](std::size_t k) {
        const FiniteSupportStream src(X, Vec(n, 1.0 / static_cast<double>(n)), dist);
        const Vec target = finite_diff_grad(
            [&](std::span<const double> th) {
                double s = 0.0;
                for (double l : Lvec(th)) s += 0.5 * l * l;
                return s / static_cast<double>(n);
            },
            theta, h);
        auto draw = [&](Rng& r) { return stream_update(ce, u_oracle, src, theta, r, r, r).direction; };
        return VariantCheck{"stream_loss_as_uncertainty", expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
    });
    // pool sampler, S_t / n scaling
    jobs.push_back([&](std::size_t k) {
        AlgorithmSpec spec;
        spec.kind = AlgorithmKind::pool;
        spec.scaling = PoolStepScaling::with_St_over_n;
        const Vec target = finite_diff_grad(
            [&](std::span<const double> th) {
                double s = 0.0;
                for (double l : Lvec(th)) s += l * l;
                return s / (2.0 * static_cast<double>(n));
            },
            theta, h);
        auto draw = [&](Rng& r) { return pool_update(spec, ce, u_oracle, pool, theta, r, r).direction; };
        return VariantCheck{"pool_scaled", expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
    });
    // pool sampler unscaled, exp(L): softmax of the conditional losses.
    jobs.push_back([&](std::size_t k) {
        AlgorithmSpec spec;
        spec.kind = AlgorithmKind::pool;
        spec.scaling = PoolStepScaling::none;
        const Vec target = finite_diff_grad(
            [&](std::span<const double> th) {
                const Vec L = Lvec(th);
                const double top = *std::max_element(L.begin(), L.end());
                double s = 0.0;
                for (double l : L) s += std::exp(l - top);
                return top + std::log(s);
            },
            theta, h);
        auto draw = [&](Rng& r) { return pool_update(spec, ce, u_exp, pool, theta, r, r).direction; };
        return VariantCheck{"pool_exp_loss", expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
    });
    // top-m: mean of the m largest conditional losses (CVaR at level m/n).
    auto topk_job = [&](std::size_t mm, const char* name) {
        return [&, mm, name](std::size_t k) {
            AlgorithmSpec spec;
            spec.kind = AlgorithmKind::topk;
            spec.m = mm;
            const auto top = top_indices(Lvec(theta), mm);
            const Vec target = finite_diff_grad(
                [&](std::span<const double> th) {
                    double s = 0.0;
                    for (std::size_t i : top) s += cond(th, i);
                    return s / static_cast<double>(mm);
                },
                theta, h);
            auto draw = [&](Rng& r) { return pool_update(spec, ce, u_oracle, pool, theta, r, r).direction; };
            return VariantCheck{name, expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
        };
    };
    jobs.push_back(topk_job(m, "topk_cvar"));
    jobs.push_back(topk_job(n, "topk_m_equals_n"));
    // mixture sampler: reweighted loss under the frozen mixture law.
    jobs.push_back([&](std::size_t k) {
        AlgorithmSpec spec;
        spec.kind = AlgorithmKind::mixture;
        spec.m = m;
        spec.gamma_mix = gmix;
        const Vec p = mixture_sampling_law(Lvec(theta), m, gmix);
        const Vec target = finite_diff_grad(
            [&](std::span<const double> th) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += p[i] * cond(th, i);
                return s;
            },
            theta, h);
        auto draw = [&](Rng& r) { return pool_update(spec, ce, u_oracle, pool, theta, r, r).direction; };
        return VariantCheck{"mixture_dro", expected_update_check(draw, target, draws, Rng(seed, 100 + k))};
    });
    return parallel_map<VariantCheck>(jobs.size(), threads, [&](std::size_t k) { return jobs[k](k); });
}

inline CommandOutput cmd_variant_checks(const CommandContext& ctx) {
    const json& c = ctx.config;
    const double zlim = cfg<double>(c, "z_limit");
    CommandOutput out;
    json report = json::object();
    for (const auto& v : run_variant_checks(c, ctx.seed(), ctx.threads)) {
        report[v.name] = {{"mean", v.result.mean},
                          {"target", v.result.target},
                          {"stderr", v.result.stderr_},
                          {"z", v.result.z},
                          {"max_abs_z", v.result.max_abs_z}};
        if (!(v.result.max_abs_z <= zlim))
            out.fail("expected_update", v.name + ": max |z| = " + format_double(v.result.max_abs_z));
    }
    // chi-square divergence of the mixture law from uniform vs the ambiguity radius
    const json& d = c.at("dro");
    const auto dn = cfg<std::size_t>(d, "n");
    const auto dm = cfg<std::size_t>(d, "m");
    const double dg = cfg<double>(d, "gamma");
    const OracleDistribution dist(four_gaussian_mixture());
    const Dataset pts = sample_mixture(four_gaussian_mixture(), dn, ctx.seed() ^ 0xd70);
    const Vec theta = cfg<Vec>(c, "theta");
    Vec u(dn);
    for (std::size_t i = 0; i < dn; ++i) u[i] = conditional_loss(dist, {LossKind::cross_entropy}, theta, pts.X.row(i));
    const Vec p = mixture_sampling_law(u, dm, dg);
    const Vec q(dn, 1.0 / static_cast<double>(dn));
    const AmbiguityParams amb{dg, dm, dn};
    const double div = chi2_divergence(p, q);
    const double residual = std::abs(div - amb.radius());
    const double cap_residual = std::abs(*std::max_element(p.begin(), p.end()) - amb.cap());
    const Vec p_full = mixture_sampling_law(u, dn, dg);
    const double div_full = chi2_divergence(p_full, q);
    report["dro_identity"] = {{"n", dn},         {"m", dm},
                              {"gamma", dg},     {"divergence", div},
                              {"radius", amb.radius()}, {"residual", residual},
                              {"cap", amb.cap()},       {"cap_residual", cap_residual},
                              {"divergence_m_equals_n", div_full}};
    if (!(residual <= 1e-12)) out.fail("dro_identity", "residual " + format_double(residual));
    if (!(cap_residual <= 1e-12)) out.fail("dro_cap", "residual " + format_double(cap_residual));
    if (!(div_full <= 1e-12)) out.fail("dro_uniform", "divergence at m = n is " + format_double(div_full));
    write_json(ctx.file("report.json"), report);
    out.files.push_back("report.json");
    out.summary = {{"max_abs_z", [&] {
                        double mz = 0.0;
                        for (const auto& [k, v] : report.items())
                            if (v.contains("max_abs_z")) mz = std::max(mz, v["max_abs_z"].get<double>());
                        return mz;
                    }()},
                   {"dro_residual", residual}};
    return out;
}

// ---- driver --------------------------------------------------------------------

inline CommandOutput dispatch(const CommandContext& ctx) {
    if (ctx.command == "boundary") return cmd_boundary(ctx);
    if (ctx.command == "active_vs_passive" || ctx.command == "regression_curves") return cmd_active_vs_passive(ctx);
    if (ctx.command == "eqloss_table") return cmd_eqloss_table(ctx);
    if (ctx.command == "psi_table") return cmd_psi_table(ctx);
    if (ctx.command == "variant_checks") return cmd_variant_checks(ctx);
    throw ConfigError("unknown command '" + ctx.command + "'");
}

/** Defaults, then the config file, then explicit overrides. */
// Recursive merge; unlike a JSON merge patch, null is a value and overwrites.
inline void merge_config(json& base, const json& patch) {
    for (const auto& [k, v] : patch.items()) {
        if (v.is_object() && base.contains(k) && base[k].is_object())
            merge_config(base[k], v);
        else
            base[k] = v;
    }
}

inline json resolve_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                           const json& overrides) {
    json c = default_config(command);
    if (file) {
        json f = read_json(*file);
        if (!f.is_object()) throw ConfigError("config must be a JSON object");
        if (f.contains("experiment") && f["experiment"] != command &&
            !(command == "regression_curves" && f["experiment"] == "active_vs_passive"))
            throw ConfigError("config is for '" + f["experiment"].get<std::string>() + "', not '" + command + "'");
        f.erase("experiment");
        merge_config(c, f);
    }
    merge_config(c, overrides);
    if (cfg<std::size_t>(c, "trials") < 1) throw ConfigError("trials must be at least 1");
    return c;
}

struct RunSummary {
    int exit_code = 0;
    json manifest;
    json failures;
};

/** Runs a command, writes its data files, summary.json, manifest.json and, on failure,
 *  failures.json. */
inline RunSummary run_command(const std::string& command, const json& config, const std::filesystem::path& out_dir,
                              std::size_t threads) {
    std::filesystem::create_directories(out_dir);
    std::filesystem::remove(out_dir / "failures.json");
    CommandContext ctx{command, config, out_dir, threads};
    CommandOutput res;
    try {
        res = dispatch(ctx);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        res.fail("exception", e.what());
    }
    write_json(out_dir / "summary.json", res.summary);
    res.files.push_back("summary.json");

    json seeds = json::array();
    for (std::size_t k = 0; k < ctx.trials(); ++k) seeds.push_back(trial_seed(ctx.seed(), k));
    json files = json::object();
    for (const auto& f : res.files) files[f] = hex64(fnv1a(read_file_bytes(out_dir / f)));
    RunSummary s;
    s.manifest = {{"command", command},
                  {"config", config},
                  {"config_hash_fnv1a", hex64(fnv1a(config.dump()))},
                  {"seed", ctx.seed()},
                  {"trial_seeds", seeds},
                  {"rng", std::string(Rng::name)},
                  {"version", std::string(version)},
                  {"files_fnv1a", files}};
    write_json(out_dir / "manifest.json", s.manifest);
    if (!res.failures.empty()) {
        s.failures = {{"command", command}, {"failures", res.failures}};
        write_json(out_dir / "failures.json", s.failures);
        s.exit_code = 1;
    }
    return s;
}

}  // namespace eqloss
