#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcis/batch_means.hpp"
#include "mcis/chain.hpp"
#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "mcis/parallel.hpp"
#include "mcis/reverse_logistic.hpp"

namespace mcis {

/// Per-chain values of a single function evaluated along stage-2 samples.
using ChainValues = std::vector<Eigen::VectorXd>;

template <class State>
ChainValues evaluate_on_chains(const SampleSet<State>& samples, const std::function<double(const State&)>& fn) {
    ChainValues out;
    out.reserve(samples.k());
    for (const auto& c : samples.chains) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(c.size()));
        for (std::size_t i = 0; i < c.size(); ++i) v(static_cast<Eigen::Index>(i)) = fn(c.states[i]);
        out.push_back(std::move(v));
    }
    return out;
}

struct TargetEstimate {
    std::string target_label;
    double u_hat = 0.0;
    std::optional<double> eta_hat;
    double var_stage1_u = 0.0;  // q c^T V c
    double var_stage2_u = 0.0;  // tau^2
    double se_u = 0.0;
    double var_stage1_eta = 0.0;  // q e^T V e
    double var_stage2_eta = 0.0;  // rho
    double se_eta = 0.0;
    double q = 0.0;
    std::size_t n = 0;
    double tail_ratio = 0.0;  // max u / mean u over the pooled sample
    std::vector<std::string> flags;
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
};

// ---------------------------------------------------------------------------
// Pointwise weights

namespace detail {

/// log of sum_s a_s nu_s / d_s at one row, plus the per-reference log terms.
inline double log_mixture(const Eigen::MatrixXd& log_nu, Eigen::Index i, const Eigen::VectorXd& log_a_over_d,
                          std::vector<double>& terms) {
    const Eigen::Index k = log_nu.cols();
    double hi = neg_inf;
    for (Eigen::Index s = 0; s < k; ++s) {
        terms[static_cast<std::size_t>(s)] = log_a_over_d(s) + log_nu(i, s);
        hi = std::max(hi, terms[static_cast<std::size_t>(s)]);
    }
    if (hi == neg_inf) throw UndefinedPoint("all reference densities vanish at a stage-2 sample");
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - hi);
    return hi + std::log(acc);
}

inline Eigen::VectorXd log_a_over_d(const Eigen::VectorXd& a, const Eigen::VectorXd& d_full) {
    if (a.size() != d_full.size()) throw InvalidParameter("weights and d must have the same length");
    // zero entries are allowed (one-hot inverse-distance weights); negative ones are not
    if ((a.array() < 0.0).any() || !(a.sum() > 0.0)) throw InvalidParameter("stage-2 weights must be non-negative and not all zero");
    if ((d_full.array() <= 0.0).any()) throw InvalidParameter("d must be strictly positive");
    return a.array().log() - d_full.array().log();
}

}  // namespace detail

/// u(x; a, d) = nu(x) / sum_s a_s nu_s(x) / d_s. `d_full` includes d_1 = 1.
inline double u_weight(double log_nu_target, std::span<const double> log_nu_refs, const Eigen::VectorXd& a,
                       const Eigen::VectorXd& d_full) {
    const Eigen::VectorXd lad = detail::log_a_over_d(a, d_full);
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(log_nu_refs.size()));
    for (std::size_t s = 0; s < log_nu_refs.size(); ++s) row(0, static_cast<Eigen::Index>(s)) = log_nu_refs[s];
    std::vector<double> terms(log_nu_refs.size());
    const double ld = detail::log_mixture(row, 0, lad, terms);
    return std::exp(log_nu_target - ld);
}

template <class State>
double u_weight(const State& x, const UnnormalizedDensity<State>& target,
                const std::vector<UnnormalizedDensity<State>>& refs, const Eigen::VectorXd& a,
                const Eigen::VectorXd& d_full) {
    std::vector<double> lr;
    for (const auto& r : refs) lr.push_back(r(x));
    return u_weight(target(x), lr, a, d_full);
}

template <class State>
double v_weight(const State& x, const Integrand<State>& f, const UnnormalizedDensity<State>& target,
                const std::vector<UnnormalizedDensity<State>>& refs, const Eigen::VectorXd& a,
                const Eigen::VectorXd& d_full) {
    return f(x) * u_weight(x, target, refs, a, d_full);
}

// ---------------------------------------------------------------------------
// One pass over the stage-2 chains for a single target

/// All per-point series and sums needed by the stage-2 estimators for one target.
///
/// `a` is the stage-2 weight vector (not necessarily normalized; every estimator is
/// invariant to a common rescaling of it) and `d_full` = (1, d_2, ..., d_k).
class TargetPass {
public:
    TargetPass(const EvaluatedSamples& refs, const ChainValues& log_nu_target, const ChainValues* f,
               Eigen::VectorXd a, Eigen::VectorXd d_full)
        : a_(std::move(a)), d_(std::move(d_full)) {
        const std::size_t k = refs.chains();
        if (k == 0) throw InvalidParameter("no stage-2 chains");
        if (refs.k() != k || static_cast<std::size_t>(a_.size()) != k)
            throw InvalidParameter("stage-2 weights must have one entry per chain");
        if (log_nu_target.size() != k || (f && f->size() != k))
            throw InvalidParameter("target values must cover every chain");
        const Eigen::VectorXd lad = detail::log_a_over_d(a_, d_);
        const auto K = static_cast<Eigen::Index>(k);
        n_ = refs.total();
        has_f_ = f != nullptr;

        u_.resize(k);
        if (has_f_) v_.resize(k);
        u_sums_.resize(k);
        v_sums_.resize(k);
        c_terms_ = Eigen::MatrixXd::Zero(K, K);  // [l, j] = sum_i u q_j / d_j
        e_terms_ = Eigen::MatrixXd::Zero(K, K);  // [l, j] = sum_i f u q_j / d_j
        std::vector<double> terms(k);
        double u_max = 0.0;
        for (std::size_t l = 0; l < k; ++l) {
            const Eigen::MatrixXd& m = refs.log_nu[l];
            const Eigen::VectorXd& lt = log_nu_target[l];
            if (lt.size() != m.rows()) throw InvalidParameter("target values length mismatch");
            Eigen::VectorXd u(m.rows());
            Eigen::VectorXd v(has_f_ ? m.rows() : 0);
            double us = 0.0, vs = 0.0;
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                const double ld = detail::log_mixture(m, i, lad, terms);
                const double ui = std::exp(lt(i) - ld);
                if (!std::isfinite(ui)) throw UndefinedPoint("importance weight overflow");
                u(i) = ui;
                us += ui;
                u_max = std::max(u_max, ui);
                double fi = 0.0;
                if (has_f_) {
                    fi = (*f)[l](i);
                    if (std::isnan(fi)) throw InvalidParameter("integrand returned NaN");
                    v(i) = fi * ui;
                    vs += v(i);
                }
                for (Eigen::Index j = 1; j < K; ++j) {
                    const double share = std::exp(terms[static_cast<std::size_t>(j)] - ld);  // a_j nu_j / d_j / mix
                    const double cu = ui * share / d_(j);
                    c_terms_(static_cast<Eigen::Index>(l), j) += cu;
                    if (has_f_) e_terms_(static_cast<Eigen::Index>(l), j) += fi * cu;
                }
            }
            u_[l] = std::move(u);
            if (has_f_) v_[l] = std::move(v);
            u_sums_[l] = us;
            v_sums_[l] = vs;
        }

        u_hat_ = 0.0;
        v_hat_ = 0.0;
        for (std::size_t l = 0; l < k; ++l) {
            const double wl = a_(static_cast<Eigen::Index>(l)) / static_cast<double>(u_[l].size());
            u_hat_ += wl * u_sums_[l];
            v_hat_ += wl * v_sums_[l];
        }
        tail_ratio_ = u_hat_ > 0.0 ? u_max / (pooled_u_sum() / static_cast<double>(n_)) : 0.0;
    }

    std::size_t k() const noexcept { return u_.size(); }
    std::size_t n() const noexcept { return n_; }
    bool has_integrand() const noexcept { return has_f_; }
    const ChainValues& u_series() const noexcept { return u_; }
    const ChainValues& v_series() const noexcept { return v_; }

    /// sum_l (a_l / n_l) sum_i u(X_i^{(l)})
    double u_hat() const noexcept { return u_hat_; }
    double v_hat() const noexcept { return v_hat_; }

    double eta_hat() const {
        require_f();
        if (!(u_hat_ > 0.0)) throw DegenerateDenominator("u_hat is zero; eta is undefined");
        return v_hat_ / u_hat_;
    }

    /// [c]_{j-1} = sum_l (1/n_l) sum_i a_j a_l nu nu_j / (mix^2 d_j^2)
    Eigen::VectorXd c_hat() const {
        const auto K = static_cast<Eigen::Index>(k());
        Eigen::VectorXd c = Eigen::VectorXd::Zero(K - 1);
        for (Eigen::Index j = 1; j < K; ++j)
            for (Eigen::Index l = 0; l < K; ++l)
                c(j - 1) += a_(l) / static_cast<double>(u_[static_cast<std::size_t>(l)].size()) * c_terms_(l, j);
        return c;
    }

    /// [e]_{j-1} = (sum_l (a_l/n_l) sum_i a_j f nu nu_j / (d_j^2 mix^2)) / u_hat - [c]_{j-1} eta_hat / u_hat
    Eigen::VectorXd e_hat() const {
        const double eta = eta_hat();
        const auto K = static_cast<Eigen::Index>(k());
        const Eigen::VectorXd c = c_hat();
        Eigen::VectorXd e(K - 1);
        for (Eigen::Index j = 1; j < K; ++j) {
            double first = 0.0;
            for (Eigen::Index l = 0; l < K; ++l)
                first += a_(l) / static_cast<double>(u_[static_cast<std::size_t>(l)].size()) * e_terms_(l, j);
            e(j - 1) = first / u_hat_ - c(j - 1) * eta / u_hat_;
        }
        return e;
    }

    /// sum_l (a_l^2 / s_l) * BM long-run variance of u along chain l.
    double tau2_hat(const BatchMeansSpec& spec = {}) const {
        double total = 0.0;
        for (std::size_t l = 0; l < k(); ++l) {
            const auto nl = static_cast<std::size_t>(u_[l].size());
            SeriesMatrix s(u_[l]);
            total += chain_factor(l) * bm_cov(s, block_size(nl, spec))(0, 0);
        }
        return total;
    }

    /// sum_l (a_l^2 / s_l) * joint BM covariance of (v, u) along chain l.
    Eigen::Matrix2d gamma_hat(const BatchMeansSpec& spec = {}) const {
        require_f();
        Eigen::Matrix2d total = Eigen::Matrix2d::Zero();
        // accumulate entry-wise in the same order as tau2_hat so gamma22 matches it exactly
        double g11 = 0.0, g12 = 0.0, g22 = 0.0;
        for (std::size_t l = 0; l < k(); ++l) {
            const auto nl = static_cast<std::size_t>(u_[l].size());
            SeriesMatrix s(static_cast<Eigen::Index>(nl), 2);
            s.col(0) = v_[l];
            s.col(1) = u_[l];
            const Eigen::MatrixXd g = bm_cov(s, block_size(nl, spec));
            const double f = chain_factor(l);
            g11 += f * g(0, 0);
            g12 += f * g(0, 1);
            g22 += f * g(1, 1);
        }
        total << g11, g12, g12, g22;
        return total;
    }

    double tail_ratio() const noexcept { return tail_ratio_; }

private:
    double chain_factor(std::size_t l) const {
        const double al = a_(static_cast<Eigen::Index>(l));
        const double sl = static_cast<double>(u_[l].size()) / static_cast<double>(n_);
        return al * al / sl;
    }

    double pooled_u_sum() const {
        double s = 0.0;
        for (double x : u_sums_) s += x;
        return s;
    }

    void require_f() const {
        if (!has_f_) throw InvalidParameter("no integrand supplied for this target");
    }

    Eigen::VectorXd a_, d_;
    std::size_t n_ = 0;
    bool has_f_ = false;
    ChainValues u_, v_;
    std::vector<double> u_sums_, v_sums_;
    Eigen::MatrixXd c_terms_, e_terms_;
    double u_hat_ = 0.0, v_hat_ = 0.0, tail_ratio_ = 0.0;
};

// ---------------------------------------------------------------------------
// Free-function estimators

inline double estimate_u(const EvaluatedSamples& refs, const ChainValues& target, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& d_full) {
    return TargetPass(refs, target, nullptr, a, d_full).u_hat();
}

inline double estimate_eta(const EvaluatedSamples& refs, const ChainValues& target, const ChainValues& f,
                           const Eigen::VectorXd& a, const Eigen::VectorXd& d_full) {
    return TargetPass(refs, target, &f, a, d_full).eta_hat();
}

inline Eigen::VectorXd c_hat(const EvaluatedSamples& refs, const ChainValues& target, const Eigen::VectorXd& a,
                             const Eigen::VectorXd& d_full) {
    return TargetPass(refs, target, nullptr, a, d_full).c_hat();
}

inline Eigen::VectorXd e_hat(const EvaluatedSamples& refs, const ChainValues& target, const ChainValues& f,
                             const Eigen::VectorXd& a, const Eigen::VectorXd& d_full) {
    return TargetPass(refs, target, &f, a, d_full).e_hat();
}

inline double tau2_hat(const EvaluatedSamples& refs, const ChainValues& target, const Eigen::VectorXd& a,
                       const Eigen::VectorXd& d_full, const BatchMeansSpec& spec = {}) {
    return TargetPass(refs, target, nullptr, a, d_full).tau2_hat(spec);
}

inline Eigen::Matrix2d gamma_hat(const EvaluatedSamples& refs, const ChainValues& target, const ChainValues& f,
                                 const Eigen::VectorXd& a, const Eigen::VectorXd& d_full,
                                 const BatchMeansSpec& spec = {}) {
    return TargetPass(refs, target, &f, a, d_full).gamma_hat(spec);
}

/// grad h^T Gamma grad h with h(x, y) = x / y, evaluated at (v_hat, u_hat).
inline double rho_hat(double v_hat, double u_hat, const Eigen::Matrix2d& gamma) {
    if (!(u_hat > 0.0)) throw DegenerateDenominator("rho_hat: u_hat must be positive");
    const Eigen::Vector2d grad(1.0 / u_hat, -v_hat / (u_hat * u_hat));
    return grad.dot(gamma * grad);
}

/// Stage-1 coupling: q = n / N, or 0 when stage 1 is treated as exact.
inline double coupling_q(std::size_t n_stage2, std::size_t n_stage1, bool assume_infinite_stage1 = false) {
    if (assume_infinite_stage1) return 0.0;
    if (n_stage1 == 0) throw InvalidParameter("stage-1 size must be positive");
    return static_cast<double>(n_stage2) / static_cast<double>(n_stage1);
}

namespace detail {

inline double quad_form(const Eigen::VectorXd& x, const Eigen::MatrixXd& V) {
    if (x.size() == 0) return 0.0;
    if (V.rows() != x.size() || V.cols() != x.size()) throw InvalidParameter("V_hat has the wrong shape");
    return x.dot(V * x);
}

}  // namespace detail

/// Fill the u part of a TargetEstimate: var = q c^T V c + tau^2.
inline void se_u(const TargetPass& pass, const Eigen::MatrixXd& V_hat, double q, const BatchMeansSpec& spec,
                 TargetEstimate& out) {
    out.u_hat = pass.u_hat();
    out.q = q;
    out.n = pass.n();
    out.var_stage1_u = q * detail::quad_form(pass.c_hat(), V_hat);
    out.var_stage2_u = pass.tau2_hat(spec);
    out.se_u = std::sqrt(std::max(0.0, out.var_stage1_u + out.var_stage2_u) / static_cast<double>(pass.n()));
}

/// Fill the eta part of a TargetEstimate: var = q e^T V e + rho.
inline void se_eta(const TargetPass& pass, const Eigen::MatrixXd& V_hat, double q, const BatchMeansSpec& spec,
                   TargetEstimate& out) {
    out.eta_hat = pass.eta_hat();
    out.q = q;
    out.n = pass.n();
    out.var_stage1_eta = q * detail::quad_form(pass.e_hat(), V_hat);
    out.var_stage2_eta = rho_hat(pass.v_hat(), pass.u_hat(), pass.gamma_hat(spec));
    out.se_eta = std::sqrt(std::max(0.0, out.var_stage1_eta + out.var_stage2_eta) / static_cast<double>(pass.n()));
}

inline TargetEstimate estimate_target(const EvaluatedSamples& refs, const ChainValues& target, const ChainValues* f,
                                      const Eigen::VectorXd& a, const Eigen::VectorXd& d_full,
                                      const Eigen::MatrixXd& V_hat, double q, const BatchMeansSpec& spec = {},
                                      std::string label = {}) {
    TargetPass pass(refs, target, f, a, d_full);
    TargetEstimate out;
    out.target_label = std::move(label);
    se_u(pass, V_hat, q, spec, out);
    if (f) se_eta(pass, V_hat, q, spec, out);
    out.tail_ratio = pass.tail_ratio();
    return out;
}

// ---------------------------------------------------------------------------
// Whole families

struct FamilyOptions {
    BatchMeansSpec spec;
    double q = 0.0;
    /// Targets whose max u / mean u exceeds this are flagged "tail_domination".
    double tail_threshold = 1e3;
    unsigned threads = 0;  // 0 = hardware concurrency
};

/// Stage-2 weights for target i of the family.
using WeightStrategyFn = std::function<Eigen::VectorXd(std::size_t target_index)>;

inline std::string format_label(const std::map<std::string, double>& label, const std::string& fallback) {
    if (label.empty()) return fallback;
    std::string out;
    for (const auto& [key, value] : label) {
        if (!out.empty()) out += ';';
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s=%.10g", key.c_str(), value);
        out += buf;
    }
    return out;
}

/// Estimates for every target of `family`. A failing target is reported with its error
/// and the remaining targets still run.
template <class State>
std::vector<TargetEstimate> estimate_family(const SampleSet<State>& samples2, const EvaluatedSamples& refs2,
                                            const TargetFamily<State>& family, const Integrand<State>* f,
                                            const WeightStrategyFn& weights, const Eigen::VectorXd& d_full,
                                            const Eigen::MatrixXd& V_hat, const FamilyOptions& opt) {
    if (family.size() == 0) throw InvalidParameter("target family must be non-empty");
    std::optional<ChainValues> f_values;
    if (f) f_values = evaluate_on_chains<State>(samples2, f->eval);

    std::vector<TargetEstimate> out(family.size());
    parallel_for(family.size(), opt.threads, [&](std::size_t t) {
        const auto& target = family.targets[t];
        const std::string label = format_label(family.labels[t], target.id);
        try {
            const ChainValues tv = evaluate_on_chains<State>(samples2, target.log_eval);
            out[t] = estimate_target(refs2, tv, f_values ? &*f_values : nullptr, weights(t), d_full, V_hat, opt.q,
                                     opt.spec, label);
            if (out[t].tail_ratio > opt.tail_threshold) out[t].flags.push_back("tail_domination");
        } catch (const Error& e) {
            out[t] = TargetEstimate{};
            out[t].target_label = label;
            out[t].q = opt.q;
            out[t].n = refs2.total();
            out[t].error = e.what();
            out[t].flags.push_back("failed");
        }
    });
    return out;
}

}  // namespace mcis
