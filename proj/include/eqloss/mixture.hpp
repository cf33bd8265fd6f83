#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "models.hpp"
#include "rng.hpp"

namespace eqloss {

struct GaussianComponent {
    Vec center;
    Vec std;  // per-axis
    double weight = 0.0;
    int label = 1;  // +-1 for binary mixtures, 1..K for multiclass
};

struct GaussianMixtureSpec {
    std::vector<GaussianComponent> components;

    std::size_t dim() const { return components.empty() ? 0 : components.front().center.size(); }

    Task task() const {
        for (const auto& c : components)
            if (c.label != 1 && c.label != -1) return Task::multiclass;
        return Task::binary;
    }

    std::size_t classes() const {
        if (task() == Task::binary) return 2;
        int k = 0;
        for (const auto& c : components) k = std::max(k, c.label);
        return static_cast<std::size_t>(k);
    }

    void validate() const {
        if (components.empty()) throw std::invalid_argument("mixture: no components");
        double total = 0.0;
        for (const auto& c : components) {
            if (c.center.size() != dim() || c.std.size() != dim())
                throw std::invalid_argument("mixture: inconsistent component dimensions");
            for (double s : c.std)
                if (!(s > 0.0)) throw std::invalid_argument("mixture: std must be positive");
            if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture: negative weight");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights must sum to 1");
        if (task() == Task::multiclass) {
            std::set<int> seen;
            for (const auto& c : components) {
                if (c.label < 1) throw std::invalid_argument("mixture: class labels must be 1..K");
                seen.insert(c.label);
            }
            if (static_cast<std::size_t>(*seen.rbegin()) != seen.size())
                throw std::invalid_argument("mixture: class labels must be contiguous 1..K");
        }
    }

    // log(w_i) + log phi_i(x) per component.
    Vec log_weighted_densities(std::span<const double> x) const {
        require_same_size(x.size(), dim(), "mixture density");
        Vec out(components.size());
        const double log2pi = std::log(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < components.size(); ++i) {
            const auto& c = components[i];
            double acc = c.weight > 0.0 ? std::log(c.weight) : -INFINITY;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double u = (x[j] - c.center[j]) / c.std[j];
                acc += -0.5 * u * u - std::log(c.std[j]) - 0.5 * log2pi;
            }
            out[i] = acc;
        }
        return out;
    }

    std::size_t draw_component(Rng& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < components.size(); ++i) {
            acc += components[i].weight;
            if (u < acc) return i;
        }
        return components.size() - 1;
    }

    Vec draw_point(std::size_t component, Rng& rng) const {
        const auto& c = components.at(component);
        Vec x(c.center.size());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = c.center[j] + c.std[j] * rng.normal();
        return x;
    }
};

/** Four isotropic Gaussians with std 0.5: centers (-2,0), (2,0) labelled +1 with
 *  weights 0.2, 0.3; centers (0,-2), (0,2) labelled -1 with weights 0.4, 0.1. */
inline GaussianMixtureSpec four_gaussian_mixture() {
    return {{
        {{-2.0, 0.0}, {0.5, 0.5}, 0.2, 1},
        {{2.0, 0.0}, {0.5, 0.5}, 0.3, 1},
        {{0.0, -2.0}, {0.5, 0.5}, 0.4, -1},
        {{0.0, 2.0}, {0.5, 0.5}, 0.1, -1},
    }};
}

}  // namespace eqloss
