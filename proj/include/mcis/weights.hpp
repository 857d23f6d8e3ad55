#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcis/batch_means.hpp"
#include "mcis/errors.hpp"
#include "mcis/parallel.hpp"
#include "mcis/reverse_logistic.hpp"

namespace mcis {

enum class WeightKind { naive, inv_dist, ess_inv_dist, pilot_optimal, explicit_vector };

inline WeightKind parse_weight_kind(const std::string& s) {
    if (s == "naive") return WeightKind::naive;
    if (s == "inv_dist") return WeightKind::inv_dist;
    if (s == "ess_inv_dist") return WeightKind::ess_inv_dist;
    if (s == "pilot_optimal") return WeightKind::pilot_optimal;
    if (s == "explicit") return WeightKind::explicit_vector;
    throw ConfigError("unknown weight strategy '" + s + "'");
}

inline const char* to_string(WeightKind k) {
    switch (k) {
        case WeightKind::naive: return "naive";
        case WeightKind::inv_dist: return "inv_dist";
        case WeightKind::ess_inv_dist: return "ess_inv_dist";
        case WeightKind::pilot_optimal: return "pilot_optimal";
        case WeightKind::explicit_vector: return "explicit";
    }
    return "?";
}

/// Lower bound applied to non-degenerate strategies before renormalizing.
inline constexpr double weight_floor = 1e-6;

namespace detail {

inline Eigen::VectorXd floor_and_normalize(Eigen::VectorXd a) {
    a /= a.sum();
    a = a.cwiseMax(weight_floor);
    return a / a.sum();
}

inline Eigen::VectorXd inverse_distance(double mu, std::span<const double> refs, std::span<const double> mass) {
    if (refs.size() != mass.size() || refs.empty()) throw InvalidParameter("inverse-distance weights: length mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (std::size_t j = i + 1; j < refs.size(); ++j)
            if (refs[i] == refs[j]) throw InvalidParameter("inverse-distance weights: references must be distinct");
    const auto k = static_cast<Eigen::Index>(refs.size());
    for (Eigen::Index l = 0; l < k; ++l) {
        if (!(mass[static_cast<std::size_t>(l)] > 0.0)) throw InvalidParameter("inverse-distance weights: mass must be positive");
        if (refs[static_cast<std::size_t>(l)] == mu) {
            // target coincides with a reference: all mass there
            Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(k);
            one_hot(l) = 1.0;
            return one_hot;
        }
    }
    Eigen::VectorXd a(k);
    for (Eigen::Index l = 0; l < k; ++l)
        a(l) = mass[static_cast<std::size_t>(l)] / std::abs(mu - refs[static_cast<std::size_t>(l)]);
    return floor_and_normalize(a);
}

}  // namespace detail

inline Eigen::VectorXd naive_weights(const std::vector<std::size_t>& n_per_chain) {
    if (n_per_chain.empty()) throw InvalidParameter("naive weights: no chains");
    Eigen::VectorXd a(static_cast<Eigen::Index>(n_per_chain.size()));
    double n = 0.0;
    for (std::size_t l = 0; l < n_per_chain.size(); ++l) {
        if (n_per_chain[l] == 0) throw InvalidParameter("naive weights: sizes must be positive");
        a(static_cast<Eigen::Index>(l)) = static_cast<double>(n_per_chain[l]);
        n += static_cast<double>(n_per_chain[l]);
    }
    return a / n;
}

/// a_l proportional to n_l / |mu - mu_l|; one-hot when mu equals a reference.
inline Eigen::VectorXd inv_dist_weights(double mu, std::span<const double> mu_refs,
                                        const std::vector<std::size_t>& n_per_chain) {
    std::vector<double> mass(n_per_chain.begin(), n_per_chain.end());
    return detail::inverse_distance(mu, mu_refs, mass);
}

/// a_l proportional to ess_l / |mu - mu_l|.
inline Eigen::VectorXd ess_inv_dist_weights(double mu, std::span<const double> mu_refs, std::span<const double> ess) {
    return detail::inverse_distance(mu, mu_refs, ess);
}

/// n * (sample variance) / (BM long-run variance), clamped to (0, n]. A zero long-run
/// variance is read as iid-like and returns n.
inline double effective_sample_size(std::span<const double> series, const BatchMeansSpec& spec = {}) {
    const std::size_t n = series.size();
    if (n < 4) throw InsufficientData("effective sample size needs at least 4 observations");
    double mean = 0.0;
    for (double x : series) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : series) ss += (x - mean) * (x - mean);
    const double var = ss / static_cast<double>(n - 1);
    const double lrv = bm_var(series, spec);
    const double nd = static_cast<double>(n);
    if (lrv <= 0.0) return nd;
    const double ess = nd * var / lrv;
    return std::clamp(ess, std::numeric_limits<double>::min(), nd);
}

/// Every strictly positive weight vector on the simplex with coordinates i / resolution.
inline std::vector<Eigen::VectorXd> simplex_lattice(std::size_t k, std::size_t resolution) {
    if (k < 1 || resolution < k) throw InvalidParameter("simplex lattice: need resolution >= k >= 1");
    std::vector<Eigen::VectorXd> out;
    std::vector<std::size_t> parts(k, 1);
    // enumerate compositions of `resolution` into k positive parts
    auto rec = [&](auto&& self, std::size_t pos, std::size_t remaining) -> void {
        if (pos + 1 == k) {
            parts[pos] = remaining;
            Eigen::VectorXd a(static_cast<Eigen::Index>(k));
            for (std::size_t i = 0; i < k; ++i)
                a(static_cast<Eigen::Index>(i)) = static_cast<double>(parts[i]) / static_cast<double>(resolution);
            out.push_back(a);
            return;
        }
        for (std::size_t v = 1; v + (k - pos - 1) <= remaining; ++v) {
            parts[pos] = v;
            self(self, pos + 1, remaining - v);
        }
    };
    rec(rec, 0, resolution);
    return out;
}

struct PilotResult {
    Eigen::VectorXd weight;
    double trace = 0.0;
    std::vector<double> traces;  // trace(V_hat) per grid point, NaN where estimation failed
};

/// Grid search for the stage-1 weight minimizing trace(V_hat) on pilot samples. Ties go to
/// the naive weight, then to the lexicographically smallest vector.
inline PilotResult pilot_optimal_weight(const EvaluatedSamples& pilot, const std::vector<Eigen::VectorXd>& grid,
                                        const BatchMeansSpec& spec = {}, unsigned threads = 0) {
    if (grid.empty()) throw InvalidParameter("pilot weight grid is empty");
    const auto sizes = pilot.sizes();
    PilotResult res;
    res.traces.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
    parallel_for(grid.size(), threads, [&](std::size_t g) {
        try {
            const RatioEstimate est = estimate_d(pilot, StageWeights(grid[g], sizes), spec);
            res.traces[g] = est.V_hat.trace();
        } catch (const ConvergenceFailure&) {
        } catch (const InsufficientData&) {
        }
    });

    const Eigen::VectorXd naive = naive_weights(sizes);
    auto normalized = [](const Eigen::VectorXd& a) { return Eigen::VectorXd(a / a.sum()); };
    auto is_naive = [&](const Eigen::VectorXd& a) { return (normalized(a) - naive).cwiseAbs().maxCoeff() <= 1e-12; };
    auto lex_less = [](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
        return std::lexicographical_compare(x.data(), x.data() + x.size(), y.data(), y.data() + y.size());
    };

    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double t = res.traces[g];
        if (std::isnan(t)) continue;
        if (!best) {
            best = g;
            continue;
        }
        const double bt = res.traces[*best];
        const double tie_tol = 1e-12 * std::max({std::abs(bt), std::abs(t), 1.0});
        if (t < bt - tie_tol) {
            best = g;
        } else if (std::abs(t - bt) <= tie_tol) {
            const bool gn = is_naive(grid[g]), bn = is_naive(grid[*best]);
            if ((gn && !bn) || (gn == bn && lex_less(normalized(grid[g]), normalized(grid[*best])))) best = g;
        }
    }
    if (!best) throw ConvergenceFailure("pilot weight search: every grid point failed", {}, 0.0);
    res.weight = normalized(grid[*best]);
    res.trace = res.traces[*best];
    return res;
}

}  // namespace mcis
