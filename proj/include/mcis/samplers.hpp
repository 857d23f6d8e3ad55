#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcis/chain.hpp"
#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "mcis/rng.hpp"

namespace mcis {

inline ChainSample<double> sample_t_iid(double df, double mu, std::size_t n, std::uint64_t seed,
                                        std::string id = {}, bool with_regen = false) {
    if (!(df > 0.0)) throw InvalidParameter("sample_t_iid: df must be positive");
    if (n < 1) throw InvalidParameter("sample_t_iid: n must be at least 1");
    Engine rng(seed);
    std::student_t_distribution<double> t(df);
    ChainSample<double> out{id.empty() ? t_density(df, mu).id : std::move(id), {}, ChainKind::iid, seed, {}};
    out.states.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.states.push_back(mu + t(rng));
    // every index of an iid sequence is a regeneration
    if (with_regen) out.regen_marks = std::vector<bool>(n, true);
    return out;
}

/// iid draws from a discrete table on {0, ..., S-1}.
inline ChainSample<int> sample_table_iid(const std::vector<double>& table, std::size_t n, std::uint64_t seed,
                                         std::string id = "table", bool with_regen = false) {
    if (n < 1) throw InvalidParameter("sample_table_iid: n must be at least 1");
    for (double v : table)
        if (!(v > 0.0)) throw InvalidParameter("sample_table_iid: entries must be positive");
    Engine rng(seed);
    std::discrete_distribution<int> pick(table.begin(), table.end());
    ChainSample<int> out{std::move(id), {}, ChainKind::iid, seed, {}};
    out.states.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.states.push_back(pick(rng));
    if (with_regen) out.regen_marks = std::vector<bool>(n, true);
    return out;
}

template <class State>
struct Proposal {
    std::function<State(Engine&)> draw;
    std::function<double(const State&)> log_density;
};

/// Settings for retrospective splitting of the independence sampler.
struct RegenOptions {
    bool enabled = false;
    /// log of the splitting constant c. When unset, it is tuned from a pilot run.
    std::optional<double> log_split_const;
    std::size_t pilot_length = 1000;
};

namespace detail {

inline double log_min1(double log_x) { return std::min(0.0, log_x); }

}  // namespace detail

/// Log importance weights log(nu/p) along a pilot independence chain, used to place
/// the splitting constant near their median.
template <class State>
double tune_log_split_const(const UnnormalizedDensity<State>& target, const Proposal<State>& proposal,
                            std::size_t pilot_length, std::uint64_t seed) {
    if (pilot_length < 1) throw InvalidParameter("pilot length must be positive");
    Engine rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto log_w = [&](const State& x) {
        const double lp = proposal.log_density(x);
        if (lp == neg_inf) throw InvalidModel("proposal density is zero at a proposed point");
        return target(x) - lp;
    };
    State x = proposal.draw(rng);
    double lw_x = log_w(x);
    std::vector<double> lws;
    lws.reserve(pilot_length);
    for (std::size_t i = 0; i < pilot_length; ++i) {
        State y = proposal.draw(rng);
        const double lw_y = log_w(y);
        if (lw_x == neg_inf || std::log(unif(rng)) < lw_y - lw_x) {
            x = y;
            lw_x = lw_y;
        }
        lws.push_back(lw_x);
    }
    auto mid = lws.begin() + static_cast<std::ptrdiff_t>(lws.size() / 2);
    std::nth_element(lws.begin(), mid, lws.end());
    return *mid;
}

/// Independence Metropolis-Hastings chain targeting `target` (up to a constant).
///
/// With regeneration enabled the chain starts from the split-chain small-set measure
/// q(y) proportional to p(y) min{1, w(y)/c}, and an accepted move x -> y starts a new
/// tour at y with probability
///     min{1, c/w(x)} min{1, w(y)/c} / min{1, w(y)/w(x)},
/// where w = nu/p. Rejected moves never regenerate.
template <class State>
ChainSample<State> independence_mh(const UnnormalizedDensity<State>& target, const Proposal<State>& proposal,
                                   std::size_t n, std::uint64_t seed, const RegenOptions& regen = {}) {
    if (n < 1) throw InvalidParameter("independence_mh: n must be at least 1");
    Engine rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto log_w = [&](const State& x) {
        const double lp = proposal.log_density(x);
        if (lp == neg_inf) throw InvalidModel("proposal density is zero at a proposed point");
        return target(x) - lp;
    };

    ChainSample<State> out{target.id, {}, ChainKind::markov, seed, std::nullopt};
    out.states.reserve(n);

    double log_c = 0.0;
    if (regen.enabled) {
        log_c = regen.log_split_const
                    ? *regen.log_split_const
                    : tune_log_split_const(target, proposal, regen.pilot_length, mix64(seed ^ 0x5eedULL));
    }

    State x;
    double lw_x;
    if (regen.enabled) {
        // rejection sampling from the small-set measure
        for (std::size_t tries = 0;; ++tries) {
            if (tries > 1'000'000) throw InvalidModel("could not draw an initial regeneration state");
            x = proposal.draw(rng);
            lw_x = log_w(x);
            if (std::log(unif(rng)) < detail::log_min1(lw_x - log_c)) break;
        }
    } else {
        x = proposal.draw(rng);
        lw_x = log_w(x);
    }

    std::vector<bool> marks;
    if (regen.enabled) {
        marks.reserve(n);
        marks.push_back(true);
    }
    out.states.push_back(x);

    for (std::size_t i = 1; i < n; ++i) {
        State y = proposal.draw(rng);
        const double lw_y = log_w(y);
        const double log_alpha = lw_x == neg_inf ? 0.0 : detail::log_min1(lw_y - lw_x);
        const bool accept = lw_y != neg_inf && unif(rng) < std::exp(log_alpha);
        bool mark = false;
        if (accept) {
            if (regen.enabled) {
                const double log_r = detail::log_min1(log_c - lw_x) + detail::log_min1(lw_y - log_c) - log_alpha;
                mark = unif(rng) < std::exp(log_r);
            }
            x = std::move(y);
            lw_x = lw_y;
        }
        out.states.push_back(x);
        if (regen.enabled) marks.push_back(mark);
    }
    if (regen.enabled) out.regen_marks = std::move(marks);
    return out;
}

/// Proposal for t_{df,mu}.
inline Proposal<double> t_proposal(double df, double mu) {
    auto dens = t_density(df, mu);
    return {[df, mu](Engine& rng) { return mu + std::student_t_distribution<double>(df)(rng); },
            dens.log_eval};
}

/// Independence sampler for a table density with a uniform proposal on {0, ..., S-1}.
inline ChainSample<int> discrete_mh(const UnnormalizedDensity<int>& target, int num_states, std::size_t n,
                                   std::uint64_t seed, const RegenOptions& regen = {}) {
    if (num_states < 2) throw InvalidParameter("discrete_mh: need at least two states");
    const double log_p = -std::log(static_cast<double>(num_states));
    Proposal<int> uniform{[num_states](Engine& rng) { return std::uniform_int_distribution<int>(0, num_states - 1)(rng); },
                          [num_states, log_p](const int& x) { return (x >= 0 && x < num_states) ? log_p : neg_inf; }};
    return independence_mh(target, uniform, n, seed, regen);
}

}  // namespace mcis
