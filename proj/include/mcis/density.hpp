#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcis/errors.hpp"

namespace mcis {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// log(sum(exp(x))) without overflow. Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> xs) {
    double hi = neg_inf;
    for (double x : xs) hi = std::max(hi, x);
    if (hi == neg_inf) return neg_inf;
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - hi);
    return hi + std::log(acc);
}

/// A density known up to its normalizing constant, evaluated on the log scale.
///
/// `log_eval` must return -inf exactly where the density vanishes and a finite value
/// elsewhere. It is called concurrently from worker threads, so it must be reentrant.
template <class State>
struct UnnormalizedDensity {
    std::string id;
    std::function<double(const State&)> log_eval;

    double operator()(const State& x) const { return log_eval(x); }

    /// Same density multiplied by exp(log_c).
    UnnormalizedDensity scaled(double log_c, std::string new_id = {}) const {
        auto inner = log_eval;
        return {new_id.empty() ? id : std::move(new_id),
                [inner, log_c](const State& x) { return inner(x) + log_c; }};
    }
};

/// A real-valued function whose expectation is estimated.
template <class State>
struct Integrand {
    std::string id;
    std::function<double(const State&)> eval;

    double operator()(const State& x) const { return eval(x); }
};

template <class State>
Integrand<State> constant_integrand(double c) {
    return {"const", [c](const State&) { return c; }};
}

template <class State>
Integrand<State> identity_integrand() {
    return {"x", [](const State& x) { return static_cast<double>(x); }};
}

/// The family of targets over which ratios and expectations are estimated.
/// `labels[i]` is the parameter record of `targets[i]` (e.g. {"mu": 0.25}).
template <class State>
struct TargetFamily {
    std::vector<UnnormalizedDensity<State>> targets;
    std::vector<std::map<std::string, double>> labels;

    TargetFamily() = default;
    TargetFamily(std::vector<UnnormalizedDensity<State>> t, std::vector<std::map<std::string, double>> l)
        : targets(std::move(t)), labels(std::move(l)) {
        if (targets.empty()) throw InvalidParameter("target family must be non-empty");
        if (labels.size() != targets.size())
            throw InvalidParameter("target family labels must align with targets");
    }

    std::size_t size() const noexcept { return targets.size(); }
};

struct StateSpace {
    enum class Kind { continuous_1d, discrete_table };
    Kind kind = Kind::continuous_1d;
    int num_states = 0;  // only meaningful for discrete_table

    static StateSpace continuous() { return {Kind::continuous_1d, 0}; }
    static StateSpace discrete(int s) {
        if (s < 1) throw InvalidParameter("discrete state space needs a positive state count");
        return {Kind::discrete_table, s};
    }
};

// ---------------------------------------------------------------------------
// Student-t

/// Log of the normalized Student-t density with `df` degrees of freedom centred at `mu`.
inline double t_log_density(double df, double mu, double x) {
    if (!(df > 0.0) || !std::isfinite(df)) throw InvalidParameter("t density: df must be positive");
    const double z = x - mu;
    const double log_norm = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                            0.5 * std::log(df * std::numbers::pi);
    return log_norm - 0.5 * (df + 1.0) * std::log1p(z * z / df);
}

/// Normalized t_{df,mu} as an UnnormalizedDensity (its normalizing constant is 1).
inline UnnormalizedDensity<double> t_density(double df, double mu, std::string id = {}) {
    if (!(df > 0.0) || !std::isfinite(df)) throw InvalidParameter("t density: df must be positive");
    const double log_norm = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                            0.5 * std::log(df * std::numbers::pi);
    const double power = 0.5 * (df + 1.0);
    if (id.empty()) id = "t_" + std::to_string(df) + "_" + std::to_string(mu);
    return {std::move(id), [=](const double& x) {
                const double z = x - mu;
                return log_norm - power * std::log1p(z * z / df);
            }};
}

// ---------------------------------------------------------------------------
// Discrete tables

/// Density on {0, ..., S-1} with nu(x) = table[x]. Out-of-range states have zero mass.
inline UnnormalizedDensity<int> discrete_table_density(std::vector<double> table, std::string id = "table") {
    if (table.size() < 2) throw InvalidParameter("discrete table needs at least two states");
    std::vector<double> logs;
    logs.reserve(table.size());
    for (double v : table) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidParameter("discrete table entries must be positive");
        logs.push_back(std::log(v));
    }
    return {std::move(id), [logs = std::move(logs)](const int& x) {
                if (x < 0 || static_cast<std::size_t>(x) >= logs.size()) return neg_inf;
                return logs[static_cast<std::size_t>(x)];
            }};
}

}  // namespace mcis
