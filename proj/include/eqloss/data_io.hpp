#pragma once

#include <algorithm>
#include <boost/tokenizer.hpp>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "linalg.hpp"
#include "mixture.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "sampler.hpp"

namespace eqloss {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Standardization {
    Vec mean;
    Vec std;  // floored at 1e-12
};

inline constexpr double std_floor = 1e-12;

struct Dataset {
    Matrix X;
    Vec y;
    Task task = Task::binary;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;  // label i (1..K, or -1/+1 as {neg, pos}) -> original string
    std::optional<Standardization> standardization;
    double target_scale = 1.0;        // regression: stored y = raw y / target_scale
    std::vector<std::size_t> source_rows;  // 0-based data-row indices in the source
    std::string provenance;

    std::size_t size() const { return y.size(); }
};

// ---- number formatting ---------------------------------------------------------

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

// ---- synthetic data ------------------------------------------------------------

/** n i.i.d. draws: component by weight, then its Gaussian; the label is the component's. */
inline Dataset sample_mixture(const GaussianMixtureSpec& spec, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample_mixture: n must be at least 1");
    spec.validate();
    Rng rng = Rng(seed).substream(tag_features);
    Dataset d;
    d.task = spec.task();
    d.X = Matrix(n, spec.dim());
    d.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = spec.draw_component(rng);
        const Vec x = spec.draw_point(c, rng);
        std::copy(x.begin(), x.end(), d.X.row(i).begin());
        d.y[i] = spec.components[c].label;
    }
    for (std::size_t j = 0; j < spec.dim(); ++j) d.feature_names.push_back("x" + std::to_string(j + 1));
    d.source_rows.resize(n);
    std::iota(d.source_rows.begin(), d.source_rows.end(), std::size_t{0});
    d.provenance = "gaussian_mixture seed=" + std::to_string(seed);
    return d;
}

// ---- CSV -----------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines;  // 1-based file line of each row
};

inline CsvTable read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    using Tok = boost::tokenizer<boost::escaped_list_separator<char>>;
    const boost::escaped_list_separator<char> sep('\\', ',', '"');
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    auto split = [&](const std::string& s) {
        std::vector<std::string> f;
        try {
            for (const auto& tok : Tok(s, sep)) f.push_back(tok);
        } catch (const boost::escaped_list_error& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed field (" + e.what() + ")");
        }
        return f;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty()) continue;
        auto fields = split(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.lines.push_back(lineno);
    }
    if (t.header.empty()) throw DataError(path.string() + ": empty file");
    return t;
}

struct CsvSchema {
    std::string label_column = "label";
    Task task = Task::binary;
    std::vector<std::string> classes;         // optional explicit label order (multiclass 1..K, binary {neg, pos})
    std::optional<std::string> positive_label;  // binary
    std::size_t subsample = 0;                // 0: keep all rows
    bool standardize = true;
    double split = 0.8;
};

struct SplitResult {
    Dataset train;
    Dataset test;
    Matrix train_raw;  // pre-standardization train features, kept for the leakage check
    std::vector<std::pair<std::string, double>> label_map;
    std::uint64_t seed = 0;
    std::uint64_t split_hash = 0;
};

// FNV-1a over the 8-byte little-endian encodings of the values.
inline std::uint64_t fnv1a(std::span<const std::size_t> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t v : values)
        for (int b = 0; b < 8; ++b) {
            h ^= (static_cast<std::uint64_t>(v) >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Standardization fit_standardization(const Matrix& X) {
    if (X.rows == 0) throw DataError("standardization: no rows");
    Standardization s{Vec(X.cols, 0.0), Vec(X.cols, 0.0)};
    const double n = static_cast<double>(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t j = 0; j < X.cols; ++j) s.mean[j] += X(i, j);
    for (double& m : s.mean) m /= n;
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t j = 0; j < X.cols; ++j) {
            const double d = X(i, j) - s.mean[j];
            s.std[j] += d * d;
        }
    for (double& v : s.std) v = std::max(std::sqrt(v / n), std_floor);
    return s;
}

inline Matrix apply_standardization(const Matrix& X, const Standardization& s) {
    require_same_size(X.cols, s.mean.size(), "standardization");
    Matrix out = X;
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t j = 0; j < X.cols; ++j) out(i, j) = (X(i, j) - s.mean[j]) / s.std[j];
    return out;
}

// Standardization stats must be exactly those of the train split.
inline void check_no_leakage(const SplitResult& r) {
    if (!r.train.standardization) return;
    const Standardization again = fit_standardization(r.train_raw);
    if (again.mean != r.train.standardization->mean || again.std != r.train.standardization->std)
        throw DataError("standardization stats do not match the train split");
    if (!r.test.standardization || r.test.standardization->mean != again.mean || r.test.standardization->std != again.std)
        throw DataError("test split standardized with different stats");
    if (apply_standardization(r.train_raw, again).data != r.train.X.data)
        throw DataError("train features inconsistent with standardization stats");
}

namespace detail {

inline std::vector<std::pair<std::string, double>> map_labels(const CsvSchema& schema,
                                                              const std::vector<std::string>& raw) {
    std::vector<std::string> order;
    for (const auto& s : raw)
        if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
    std::vector<std::pair<std::string, double>> map;
    auto from_list = [&](const std::vector<std::string>& names, auto value_of) {
        for (std::size_t k = 0; k < names.size(); ++k) map.emplace_back(names[k], value_of(k));
        for (const auto& s : order)
            if (std::find(names.begin(), names.end(), s) == names.end())
                throw DataError("unknown class label '" + s + "'");
    };
    switch (schema.task) {
        case Task::regression: return {};
        case Task::multiclass:
            from_list(schema.classes.empty() ? order : schema.classes,
                      [](std::size_t k) { return static_cast<double>(k + 1); });
            return map;
        case Task::binary: {
            if (!schema.classes.empty()) {
                if (schema.classes.size() != 2) throw DataError("binary schema needs exactly two classes");
                from_list(schema.classes, [](std::size_t k) { return k == 0 ? -1.0 : 1.0; });
                return map;
            }
            if (schema.positive_label) {
                std::vector<std::string> names;
                for (const auto& s : order)
                    if (s != *schema.positive_label) names.push_back(s);
                if (names.size() > 1) throw DataError("binary task: more than one negative label");
                if (names.empty()) names.push_back("");
                names.push_back(*schema.positive_label);
                from_list(names, [](std::size_t k) { return k == 0 ? -1.0 : 1.0; });
                return map;
            }
            if (order.size() > 2) throw DataError("binary task: more than two distinct labels");
            bool numeric = true;
            std::vector<double> vals;
            for (const auto& s : order) {
                const auto v = parse_double(s);
                if (!v) numeric = false;
                else vals.push_back(*v);
            }
            if (numeric && std::all_of(vals.begin(), vals.end(), [](double v) { return v == -1.0 || v == 1.0; })) {
                for (std::size_t k = 0; k < order.size(); ++k) map.emplace_back(order[k], vals[k]);
                return map;
            }
            if (numeric && std::all_of(vals.begin(), vals.end(), [](double v) { return v == 0.0 || v == 1.0; })) {
                for (std::size_t k = 0; k < order.size(); ++k) map.emplace_back(order[k], vals[k] == 1.0 ? 1.0 : -1.0);
                return map;
            }
            // first appearance is the positive class
            for (std::size_t k = 0; k < order.size(); ++k) map.emplace_back(order[k], k == 0 ? 1.0 : -1.0);
            return map;
        }
    }
    return map;
}

}  // namespace detail

/** Reads a headed CSV, shuffles with seed, optionally subsamples, splits train/test,
 *  standardizes with train-only stats. */
inline SplitResult load_csv(const std::filesystem::path& path, const CsvSchema& schema, std::uint64_t seed) {
    if (!(schema.split > 0.0 && schema.split < 1.0)) throw std::invalid_argument("load_csv: split must lie in (0, 1)");
    const CsvTable t = read_csv_table(path);
    const auto lab_it = std::find(t.header.begin(), t.header.end(), schema.label_column);
    if (lab_it == t.header.end()) throw DataError(path.string() + ": no label column '" + schema.label_column + "'");
    const std::size_t lab = static_cast<std::size_t>(lab_it - t.header.begin());
    const std::size_t d = t.header.size() - 1;
    if (d == 0) throw DataError(path.string() + ": no feature columns");

    Matrix X(t.rows.size(), d);
    std::vector<std::string> raw_labels(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        std::size_t j = 0;
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            if (c == lab) continue;
            const auto v = parse_double(t.rows[i][c]);
            if (!v || !std::isfinite(*v))
                throw DataError(path.string() + ":" + std::to_string(t.lines[i]) + ": column '" + t.header[c] +
                                "': non-numeric value '" + t.rows[i][c] + "'");
            X(i, j++) = *v;
        }
        raw_labels[i] = t.rows[i][lab];
    }

    SplitResult r;
    r.seed = seed;
    r.label_map = detail::map_labels(schema, raw_labels);
    Vec y(t.rows.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (schema.task == Task::regression) {
            const auto v = parse_double(raw_labels[i]);
            if (!v || !std::isfinite(*v))
                throw DataError(path.string() + ":" + std::to_string(t.lines[i]) + ": non-numeric target '" +
                                raw_labels[i] + "'");
            y[i] = *v;
        } else {
            const auto it = std::find_if(r.label_map.begin(), r.label_map.end(),
                                         [&](const auto& p) { return p.first == raw_labels[i]; });
            y[i] = it->second;
        }
    }

    // shuffle, subsample, split
    std::vector<std::size_t> perm(t.rows.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = Rng(seed).substream(fnv1a("split"));
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    if (schema.subsample > 0 && schema.subsample < perm.size()) perm.resize(schema.subsample);
    const auto n = perm.size();
    const auto n_train = static_cast<std::size_t>(std::llround(schema.split * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) throw DataError(path.string() + ": too few rows for the requested split");

    std::vector<std::string> fnames;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != lab) fnames.push_back(t.header[c]);
    auto take = [&](std::size_t lo, std::size_t hi) {
        Dataset ds;
        ds.task = schema.task;
        ds.feature_names = fnames;
        ds.X = Matrix(hi - lo, d);
        for (std::size_t i = lo; i < hi; ++i) {
            std::copy(X.row(perm[i]).begin(), X.row(perm[i]).end(), ds.X.row(i - lo).begin());
            ds.y.push_back(y[perm[i]]);
            ds.source_rows.push_back(perm[i]);
        }
        for (const auto& [name, v] : r.label_map) ds.class_names.push_back(name);
        ds.provenance = path.string();
        return ds;
    };
    r.train = take(0, n_train);
    r.test = take(n_train, n);
    r.split_hash = fnv1a(std::span<const std::size_t>(r.train.source_rows));
    r.train_raw = r.train.X;

    if (schema.standardize) {
        const Standardization s = fit_standardization(r.train.X);
        r.train.X = apply_standardization(r.train.X, s);
        r.test.X = apply_standardization(r.test.X, s);
        r.train.standardization = s;
        r.test.standardization = s;
    }
    if (schema.task == Task::regression) {
        double scale = 0.0;
        for (double v : r.train.y) scale = std::max(scale, std::abs(v));
        if (scale == 0.0) scale = 1.0;
        for (double& v : r.train.y) v /= scale;
        for (double& v : r.test.y) v /= scale;
        r.train.target_scale = r.test.target_scale = scale;
    }
    check_no_leakage(r);
    return r;
}

/** Features then a "label" column; values in shortest round-trip form. */
inline void write_csv(const std::filesystem::path& path, const Dataset& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (std::size_t j = 0; j < d.X.cols; ++j)
        out << (j < d.feature_names.size() ? d.feature_names[j] : "x" + std::to_string(j + 1)) << ',';
    out << "label\n";
    for (std::size_t i = 0; i < d.X.rows; ++i) {
        for (std::size_t j = 0; j < d.X.cols; ++j) out << format_double(d.X(i, j)) << ',';
        out << format_double(d.y[i]) << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

// Reads a file produced by write_csv back verbatim (no shuffling or standardization).
inline Dataset read_dataset_csv(const std::filesystem::path& path, Task task) {
    const CsvTable t = read_csv_table(path);
    if (t.header.empty() || t.header.back() != "label") throw DataError(path.string() + ": last column must be 'label'");
    Dataset d;
    d.task = task;
    d.feature_names.assign(t.header.begin(), t.header.end() - 1);
    d.X = Matrix(t.rows.size(), t.header.size() - 1);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t j = 0; j < t.header.size(); ++j) {
            const auto v = parse_double(t.rows[i][j]);
            if (!v) throw DataError(path.string() + ":" + std::to_string(t.lines[i]) + ": non-numeric value");
            if (j + 1 < t.header.size())
                d.X(i, j) = *v;
            else
                d.y.push_back(*v);
        }
        d.source_rows.push_back(i);
    }
    d.provenance = path.string();
    return d;
}

inline nlohmann::json split_metadata(const SplitResult& r, const CsvSchema& schema) {
    using nlohmann::json;
    json j;
    j["source"] = r.train.provenance;
    j["schema"] = {{"label_column", schema.label_column}, {"task", std::string(to_string(schema.task))},
                   {"subsample", schema.subsample},       {"standardize", schema.standardize},
                   {"split", schema.split}};
    j["seed"] = r.seed;
    j["train_rows"] = r.train.size();
    j["test_rows"] = r.test.size();
    std::ostringstream h;
    h << std::hex << r.split_hash;
    j["split_hash_fnv1a"] = h.str();
    if (r.train.standardization)
        j["standardization"] = {{"mean", r.train.standardization->mean}, {"std", r.train.standardization->std}};
    json lm = json::array();
    for (const auto& [name, v] : r.label_map) lm.push_back({{"raw", name}, {"label", v}});
    j["label_map"] = lm;
    j["target_scale"] = r.train.target_scale;
    j["repeated_query_labels"] = "stored";
    return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// ---- run persistence -----------------------------------------------------------

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace detail

inline nlohmann::json to_json(const AlgorithmSpec& s) {
    return {{"kind", std::string(to_string(s.kind))},
            {"T", s.T},
            {"schedule", std::string(to_string(s.schedule))},
            {"eta", s.eta},
            {"D", s.D},
            {"G", s.G},
            {"step_size", s.step_size()},
            {"m", s.m},
            {"gamma_mix", s.gamma_mix},
            {"pool_step_scaling", std::string(to_string(s.scaling))},
            {"seed", s.seed},
            {"stream", s.stream},
            {"radius", detail::number_or_null(s.radius)},
            {"snapshot_stride", s.effective_snapshot_stride()},
            {"log_stride", s.effective_log_stride()}};
}

/** Wall time is left out unless asked for, so that data files stay byte-reproducible. */
inline nlohmann::json to_json(const RunRecord& r, bool include_timing = false) {
    using nlohmann::json;
    json j;
    j["spec"] = to_json(r.spec);
    j["rng"] = r.rng;
    j["queries"] = r.queries;
    j["fallback_steps"] = r.fallback_steps;
    j["theta_init"] = r.theta_init;
    j["theta"] = r.theta;
    j["theta_bar"] = r.theta_bar;
    json steps = json::array();
    for (const auto& s : r.steps)
        steps.push_back({s.step, s.queried, s.index == no_index ? json() : json(s.index), detail::number_or_null(s.u),
                         detail::number_or_null(s.s_total), s.queries_so_far});
    j["step_columns"] = {"step", "queried", "index", "u", "s_total", "queries_so_far"};
    j["steps"] = steps;
    json snaps = json::array();
    for (const auto& s : r.snapshots) snaps.push_back({{"step", s.step}, {"theta", s.theta}, {"theta_bar", s.theta_bar}});
    j["snapshots"] = snaps;
    json met = json::array();
    for (const auto& m : r.metrics)
        met.push_back({{"step", m.step}, {"queries", m.queries}, {"train", detail::number_or_null(m.train)},
                       {"test", detail::number_or_null(m.test)}});
    j["metrics"] = met;
    if (include_timing) j["wall_seconds"] = r.wall_seconds;
    return j;
}

// step,queries_so_far,train_metric,test_metric
inline void write_metrics_csv(const std::filesystem::path& path, const RunRecord& r) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,queries_so_far,train_metric,test_metric\n";
    for (const auto& m : r.metrics)
        out << m.step << ',' << m.queries << ',' << format_double(m.train) << ',' << format_double(m.test) << '\n';
}

}  // namespace eqloss
