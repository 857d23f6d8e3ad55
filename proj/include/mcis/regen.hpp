#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "mcis/chain.hpp"
#include "mcis/errors.hpp"
#include "mcis/gen_is.hpp"
#include "mcis/reverse_logistic.hpp"

namespace mcis {

/// Tour sums for one chain: V_t = sum of v, U_t = sum of u, T_t = tour length.
struct ChainTours {
    std::vector<double> V, U;
    std::vector<std::size_t> T;

    std::size_t count() const noexcept { return T.size(); }

    /// Length of the prefix covered by complete tours.
    std::size_t length() const noexcept {
        std::size_t n = 0;
        for (auto t : T) n += t;
        return n;
    }
};

/// One entry per chain.
struct TourStatistics {
    std::vector<ChainTours> chains;

    std::size_t total_length() const noexcept {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.length();
        return n;
    }
};

/// Start indices of the complete tours, followed by the end of the last complete tour.
inline std::vector<std::size_t> tour_boundaries(const std::vector<bool>& marks) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < marks.size(); ++i)
        if (marks[i]) idx.push_back(i);
    if (idx.size() < 2) throw InsufficientRegeneration("need at least two regenerations to form a tour");
    return idx;
}

/// Cut u (and optionally v) into tours delimited by consecutive regeneration marks.
/// The trailing incomplete tour is dropped.
inline ChainTours split_tours(const std::vector<bool>& marks, const Eigen::VectorXd& u,
                              const Eigen::VectorXd* v = nullptr) {
    if (static_cast<std::size_t>(u.size()) != marks.size() || (v && v->size() != u.size()))
        throw InvalidParameter("split_tours: series length does not match regeneration marks");
    if (marks.empty() || !marks[0]) throw InvalidParameter("split_tours: chain must start a tour");
    const auto idx = tour_boundaries(marks);
    ChainTours out;
    for (std::size_t t = 0; t + 1 < idx.size(); ++t) {
        double us = 0.0, vs = 0.0;
        for (std::size_t i = idx[t]; i < idx[t + 1]; ++i) {
            us += u(static_cast<Eigen::Index>(i));
            if (v) vs += (*v)(static_cast<Eigen::Index>(i));
        }
        out.U.push_back(us);
        out.V.push_back(vs);
        out.T.push_back(idx[t + 1] - idx[t]);
    }
    return out;
}

/// Tours of every stage-2 chain for one target, using u = nu / sum_l w_l nu_l (the form
/// the general estimator takes when a = w * (1, d_hat)).
inline TourStatistics split_tours(const std::vector<std::vector<bool>>& marks, const EvaluatedSamples& refs,
                                  const ChainValues& target, const ChainValues* f, const Eigen::VectorXd& w) {
    if (marks.size() != refs.chains()) throw InvalidParameter("split_tours: one mark vector per chain required");
    if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw InvalidParameter("RS weights must be non-negative and not all zero");
    const TargetPass pass(refs, target, f, w, Eigen::VectorXd::Ones(w.size()));
    TourStatistics out;
    for (std::size_t l = 0; l < marks.size(); ++l)
        out.chains.push_back(split_tours(marks[l], pass.u_series()[l], f ? &pass.v_series()[l] : nullptr));
    return out;
}

template <class State>
std::vector<std::vector<bool>> regen_marks_of(const SampleSet<State>& samples) {
    std::vector<std::vector<bool>> out;
    for (const auto& c : samples.chains) {
        if (!c.regen_marks) throw InsufficientRegeneration("chain '" + c.density_id + "' has no regeneration marks");
        out.push_back(*c.regen_marks);
    }
    return out;
}

/// Chain truncated to the prefix covered by its complete tours.
template <class State>
ChainSample<State> regeneration_prefix(const ChainSample<State>& c) {
    if (!c.regen_marks) throw InsufficientRegeneration("chain '" + c.density_id + "' has no regeneration marks");
    const auto idx = tour_boundaries(*c.regen_marks);
    ChainSample<State> out = c;
    out.states.resize(idx.back());
    out.regen_marks->resize(idx.back());
    return out;
}

namespace detail {

inline void require_tours(const TourStatistics& tours, std::size_t k) {
    if (tours.chains.size() != k) throw InvalidParameter("tour statistics must cover every chain");
    for (const auto& c : tours.chains)
        if (c.count() == 0) throw InsufficientRegeneration("chain has no complete tour");
}

inline double sum(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
}

}  // namespace detail

/// u_hat = sum_l w_l d_l Ubar_l / Tbar_l, with `d_full` = (1, d_2, ..., d_k).
inline double rs_estimate_u(const TourStatistics& tours, const Eigen::VectorXd& w, const Eigen::VectorXd& d_full) {
    detail::require_tours(tours, static_cast<std::size_t>(w.size()));
    double u = 0.0;
    for (std::size_t l = 0; l < tours.chains.size(); ++l) {
        const auto& c = tours.chains[l];
        const auto L = static_cast<Eigen::Index>(l);
        u += w(L) * d_full(L) / static_cast<double>(c.length()) * detail::sum(c.U);
    }
    return u;
}

inline double rs_estimate_eta(const TourStatistics& tours, const Eigen::VectorXd& w, const Eigen::VectorXd& d_full) {
    detail::require_tours(tours, static_cast<std::size_t>(w.size()));
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < tours.chains.size(); ++l) {
        const auto& c = tours.chains[l];
        const auto L = static_cast<Eigen::Index>(l);
        const double scale = w(L) * d_full(L) / static_cast<double>(c.length());
        num += scale * detail::sum(c.V);
        den += scale * detail::sum(c.U);
    }
    if (!(den > 0.0)) throw DegenerateDenominator("RS eta: denominator is zero");
    return num / den;
}

struct RSVariance {
    double stage1 = 0.0;  // q X^T W X
    double stage2 = 0.0;  // kappa^2 (for u) or tau^2 (for eta)
    std::size_t n = 0;    // total length of the complete-tour prefixes

    double total() const noexcept { return stage1 + stage2; }
    double se() const noexcept { return std::sqrt(std::max(0.0, total()) / static_cast<double>(n)); }
};

/// Regenerative variance of u_hat (f absent) or eta_hat (f present), on the scale of
/// sqrt(n) with n the total stage-2 length.
///
/// Per chain, the ratio estimator sum_t A_t / sum_t T_t has asymptotic variance
/// (1/R) sum_t (A_t - ratio T_t)^2 / Tbar on the sqrt(n_l) scale; chains are combined with
/// the (w_l d_l)^2 / s_l weighting of the pooled estimator. The stage-1 contribution is
/// q M^T W M (or q L^T W L) with M_{j-1} = w_j Ubar_j / Tbar_j and
///   L_{j-1} = w_j Vbar_j/Tbar_j / B - A w_j Ubar_j/Tbar_j / B^2,
/// where A and B are the numerator and denominator of eta_hat.
inline RSVariance rs_variance(const TourStatistics& tours, bool for_eta, const Eigen::VectorXd& w,
                              const Eigen::VectorXd& d_full, const Eigen::MatrixXd& W_hat, double q) {
    const std::size_t k = static_cast<std::size_t>(w.size());
    detail::require_tours(tours, k);
    for (const auto& c : tours.chains)
        if (c.count() < 2) throw InsufficientRegeneration("RS variance needs at least two tours per chain");

    RSVariance out;
    out.n = tours.total_length();
    const double n = static_cast<double>(out.n);

    std::vector<double> mu_u(k), mu_v(k);
    double A = 0.0, B = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
        const auto& c = tours.chains[l];
        const double len = static_cast<double>(c.length());
        mu_u[l] = detail::sum(c.U) / len;
        mu_v[l] = detail::sum(c.V) / len;
        const double scale = w(static_cast<Eigen::Index>(l)) * d_full(static_cast<Eigen::Index>(l));
        A += scale * mu_v[l];
        B += scale * mu_u[l];
    }
    const double eta = for_eta ? A / B : 0.0;
    if (for_eta && !(B > 0.0)) throw DegenerateDenominator("RS eta: denominator is zero");

    for (std::size_t l = 0; l < k; ++l) {
        const auto& c = tours.chains[l];
        const double R = static_cast<double>(c.count());
        const double len = static_cast<double>(c.length());
        const double tbar = len / R;
        const double center = for_eta ? mu_v[l] - eta * mu_u[l] : mu_u[l];
        double ss = 0.0;
        for (std::size_t t = 0; t < c.count(); ++t) {
            const double a_t = for_eta ? c.V[t] - eta * c.U[t] : c.U[t];
            const double r = a_t - center * static_cast<double>(c.T[t]);
            ss += r * r;
        }
        const double chain_var = ss / R / tbar;
        const double scale = w(static_cast<Eigen::Index>(l)) * d_full(static_cast<Eigen::Index>(l)) / (for_eta ? B : 1.0);
        const double s_l = len / n;
        out.stage2 += scale * scale / s_l * chain_var;
    }

    if (k > 1 && q != 0.0) {
        Eigen::VectorXd grad(static_cast<Eigen::Index>(k - 1));
        for (std::size_t j = 1; j < k; ++j) {
            const double wj = w(static_cast<Eigen::Index>(j));
            grad(static_cast<Eigen::Index>(j - 1)) =
                for_eta ? wj * mu_v[j] / B - A * wj * mu_u[j] / (B * B) : wj * mu_u[j];
        }
        if (W_hat.rows() != grad.size() || W_hat.cols() != grad.size())
            throw InvalidParameter("rs_variance: W_hat has the wrong shape");
        out.stage1 = q * grad.dot(W_hat * grad);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regenerative covariance of the stage-1 ratio estimate

/// Long-run covariance of the rows of `series` estimated from regeneration tours:
/// (1/R) sum_t (G_t - mu T_t)(G_t - mu T_t)^T / Tbar, with G_t the tour sums.
inline Eigen::MatrixXd rs_chain_cov(const Eigen::MatrixXd& series, const std::vector<bool>& marks) {
    if (static_cast<std::size_t>(series.rows()) != marks.size())
        throw InvalidParameter("rs_chain_cov: marks length mismatch");
    const auto idx = tour_boundaries(marks);
    const std::size_t R = idx.size() - 1;
    if (R < 2) throw InsufficientRegeneration("RS covariance needs at least two tours");
    const auto p = series.cols();
    Eigen::MatrixXd G(static_cast<Eigen::Index>(R), p);
    Eigen::VectorXd T(static_cast<Eigen::Index>(R));
    for (std::size_t t = 0; t < R; ++t) {
        G.row(static_cast<Eigen::Index>(t)) =
            series.middleRows(static_cast<Eigen::Index>(idx[t]), static_cast<Eigen::Index>(idx[t + 1] - idx[t]))
                .colwise()
                .sum();
        T(static_cast<Eigen::Index>(t)) = static_cast<double>(idx[t + 1] - idx[t]);
    }
    const Eigen::RowVectorXd mu = G.colwise().sum() / T.sum();
    const Eigen::MatrixXd resid = G - T * mu;
    const double tbar = T.mean();
    Eigen::MatrixXd out = resid.transpose() * resid / static_cast<double>(R) / tbar;
    return 0.5 * (out + out.transpose());
}

/// V_hat for d_hat with every chain's long-run covariance estimated from its tours
/// instead of batch means. B_hat and d_hat are taken from the BM-based estimate.
inline Eigen::MatrixXd rs_covariance_d(const EvaluatedSamples& ev, const RatioEstimate& est,
                                       const std::vector<std::vector<bool>>& marks) {
    if (marks.size() != ev.chains()) throw InvalidParameter("rs_covariance_d: one mark vector per chain required");
    std::vector<Eigen::MatrixXd> covs;
    for (std::size_t l = 0; l < ev.chains(); ++l)
        covs.push_back(rs_chain_cov(membership_matrix(ev.log_nu[l], est.zeta_hat), marks[l]));
    const Eigen::MatrixXd omega = omega_from_chain_covs(covs, est.a, ev.sizes());
    return covariance_V(gradient_map_D(est.d_hat), est.B_hat, omega);
}

inline void write_tours_csv(std::ostream& os, const TourStatistics& tours, bool header = true) {
    if (header) os << "chain,tour_index,V,U,T\n";
    char buf[128];
    for (std::size_t l = 0; l < tours.chains.size(); ++l) {
        const auto& c = tours.chains[l];
        for (std::size_t t = 0; t < c.count(); ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%zu\n", l, t, c.V[t], c.U[t], c.T[t]);
            os << buf;
        }
    }
}

}  // namespace mcis
