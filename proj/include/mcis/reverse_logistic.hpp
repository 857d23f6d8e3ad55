#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcis/batch_means.hpp"
#include "mcis/chain.hpp"
#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "mcis/linalg.hpp"

namespace mcis {

// ---------------------------------------------------------------------------
// Evaluated samples

/// log nu_s(X_i^{(l)}) for every chain l (rows i, columns s = 1..k).
struct EvaluatedSamples {
    std::vector<Eigen::MatrixXd> log_nu;

    std::size_t k() const noexcept { return log_nu.empty() ? 0 : static_cast<std::size_t>(log_nu.front().cols()); }
    std::size_t chains() const noexcept { return log_nu.size(); }
    std::size_t size(std::size_t l) const noexcept { return static_cast<std::size_t>(log_nu[l].rows()); }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> out;
        for (const auto& m : log_nu) out.push_back(static_cast<std::size_t>(m.rows()));
        return out;
    }

    std::size_t total() const noexcept {
        std::size_t n = 0;
        for (const auto& m : log_nu) n += static_cast<std::size_t>(m.rows());
        return n;
    }
};

template <class State>
EvaluatedSamples evaluate_references(const SampleSet<State>& samples,
                                     std::span<const UnnormalizedDensity<State>> densities) {
    samples.validate();
    const std::size_t k = densities.size();
    if (k == 0) throw InvalidParameter("need at least one reference density");
    EvaluatedSamples out;
    out.log_nu.reserve(samples.k());
    for (const auto& chain : samples.chains) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(chain.size()), static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < chain.size(); ++i) {
            bool any = false;
            for (std::size_t s = 0; s < k; ++s) {
                const double v = densities[s](chain.states[i]);
                if (std::isnan(v)) throw InvalidParameter("density '" + densities[s].id + "' returned NaN");
                any = any || v != neg_inf;
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = v;
            }
            if (!any)
                throw UndefinedPoint("all reference densities vanish at sample " + std::to_string(i) + " of chain '" +
                                     chain.density_id + "'");
        }
        out.log_nu.push_back(std::move(m));
    }
    return out;
}

template <class State>
EvaluatedSamples evaluate_references(const SampleSet<State>& samples,
                                     const std::vector<UnnormalizedDensity<State>>& densities) {
    return evaluate_references(samples, std::span<const UnnormalizedDensity<State>>(densities));
}

// ---------------------------------------------------------------------------
// Domain types

/// Log-odds offsets; only defined up to an additive constant, so the representative
/// used for reporting has its components summing to zero.
struct ZetaVector {
    Eigen::VectorXd values;

    static ZetaVector zeros(std::size_t k) { return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k))}; }

    ZetaVector centered() const { return {values.array() - values.mean()}; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
};

/// Stage-1 mixing weights a (a probability vector) and the derived w_l = a_l n / n_l.
class StageWeights {
public:
    StageWeights(const Eigen::VectorXd& raw_a, const std::vector<std::size_t>& sizes) {
        if (static_cast<std::size_t>(raw_a.size()) != sizes.size())
            throw InvalidParameter("stage weights: length does not match chain count");
        if ((raw_a.array() <= 0.0).any() || !raw_a.allFinite())
            throw InvalidParameter("stage weights must be strictly positive");
        a_ = raw_a / raw_a.sum();
        double n = 0.0;
        for (auto s : sizes) {
            if (s == 0) throw InvalidParameter("stage weights: empty chain");
            n += static_cast<double>(s);
        }
        w_.resize(raw_a.size());
        for (Eigen::Index l = 0; l < a_.size(); ++l) w_(l) = a_(l) * n / static_cast<double>(sizes[static_cast<std::size_t>(l)]);
    }

    /// a_l = n_l / n, which makes w identically one.
    static StageWeights naive(const std::vector<std::size_t>& sizes) {
        Eigen::VectorXd a(static_cast<Eigen::Index>(sizes.size()));
        for (std::size_t l = 0; l < sizes.size(); ++l) a(static_cast<Eigen::Index>(l)) = static_cast<double>(sizes[l]);
        return StageWeights(a, sizes);
    }

    const Eigen::VectorXd& a() const noexcept { return a_; }
    const Eigen::VectorXd& w() const noexcept { return w_; }

private:
    Eigen::VectorXd a_;
    Eigen::VectorXd w_;
};

struct RatioEstimate {
    Eigen::VectorXd d_hat;   // d_2..d_k; d_1 = 1 is implicit
    Eigen::MatrixXd V_hat;   // asymptotic covariance of sqrt(N) (d_hat - d)
    Eigen::VectorXd se;      // sqrt(diag(V_hat) / N)
    std::vector<std::size_t> n_per_chain;
    Eigen::VectorXd a;
    ZetaVector zeta_hat;
    Eigen::MatrixXd B_hat;
    Eigen::MatrixXd Omega_hat;
    int iterations = 0;
    double grad_norm = 0.0;

    std::size_t total() const noexcept {
        std::size_t n = 0;
        for (auto s : n_per_chain) n += s;
        return n;
    }

    /// (1, d_2, ..., d_k).
    Eigen::VectorXd full_d() const {
        Eigen::VectorXd out(d_hat.size() + 1);
        out(0) = 1.0;
        out.tail(d_hat.size()) = d_hat;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Membership probabilities

namespace detail {

/// p(row) = softmax(log_nu + zeta), written into `p`. Throws when every entry is -inf.
inline void softmax_row(const Eigen::MatrixXd& log_nu, Eigen::Index i, const Eigen::VectorXd& zeta,
                        std::vector<double>& p) {
    const Eigen::Index k = log_nu.cols();
    double hi = neg_inf;
    for (Eigen::Index s = 0; s < k; ++s) {
        p[static_cast<std::size_t>(s)] = log_nu(i, s) + zeta(s);
        hi = std::max(hi, p[static_cast<std::size_t>(s)]);
    }
    if (hi == neg_inf) throw UndefinedPoint("membership probability undefined: all densities vanish");
    double total = 0.0;
    for (auto& v : p) {
        v = std::exp(v - hi);
        total += v;
    }
    for (auto& v : p) v /= total;
}

}  // namespace detail

/// p_l(x, zeta) = nu_l(x) e^{zeta_l} / sum_s nu_s(x) e^{zeta_s}, from log nu values.
inline Eigen::VectorXd membership_prob(std::span<const double> log_nu, const ZetaVector& zeta) {
    if (log_nu.size() != zeta.size()) throw InvalidParameter("membership_prob: length mismatch");
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(log_nu.size()));
    for (std::size_t s = 0; s < log_nu.size(); ++s) row(0, static_cast<Eigen::Index>(s)) = log_nu[s];
    std::vector<double> p(log_nu.size());
    detail::softmax_row(row, 0, zeta.values, p);
    return Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
}

template <class State>
Eigen::VectorXd membership_prob(const State& x, const ZetaVector& zeta,
                                std::span<const UnnormalizedDensity<State>> densities) {
    std::vector<double> log_nu;
    for (const auto& d : densities) log_nu.push_back(d(x));
    return membership_prob(std::span<const double>(log_nu), zeta);
}

/// n_l x k matrix of p_r(X_i^{(l)}, zeta) for one chain.
inline Eigen::MatrixXd membership_matrix(const Eigen::MatrixXd& log_nu, const ZetaVector& zeta) {
    Eigen::MatrixXd out(log_nu.rows(), log_nu.cols());
    std::vector<double> p(static_cast<std::size_t>(log_nu.cols()));
    for (Eigen::Index i = 0; i < log_nu.rows(); ++i) {
        detail::softmax_row(log_nu, i, zeta.values, p);
        for (Eigen::Index s = 0; s < log_nu.cols(); ++s) out(i, s) = p[static_cast<std::size_t>(s)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quasi-likelihood and derivatives

/// ell_n, its gradient in zeta, and its Hessian (which equals -n * B(zeta)).
struct QuasiLikelihood {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

namespace detail {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0, comp_ = 0.0;
};

}  // namespace detail

inline void check_shapes(const EvaluatedSamples& ev, const ZetaVector& zeta, const StageWeights& weights) {
    const std::size_t k = ev.chains();
    if (k == 0) throw InvalidParameter("no chains");
    if (ev.k() != k) throw InvalidParameter("reverse logistic regression needs one chain per reference density");
    if (zeta.size() != k || static_cast<std::size_t>(weights.a().size()) != k)
        throw InvalidParameter("zeta / weight length does not match chain count");
    for (std::size_t l = 0; l < k; ++l)
        if (ev.size(l) == 0) throw InvalidParameter("empty chain");
}

inline QuasiLikelihood quasi_likelihood_full(const EvaluatedSamples& ev, const ZetaVector& zeta,
                                            const StageWeights& weights, bool with_hessian = true) {
    check_shapes(ev, zeta, weights);
    const std::size_t k = ev.chains();
    const auto K = static_cast<Eigen::Index>(k);
    QuasiLikelihood out;
    out.gradient = Eigen::VectorXd::Zero(K);
    if (with_hessian) out.hessian = Eigen::MatrixXd::Zero(K, K);
    std::vector<double> p(k);
    for (std::size_t l = 0; l < k; ++l) {
        const Eigen::MatrixXd& m = ev.log_nu[l];
        const double wl = weights.w()(static_cast<Eigen::Index>(l));
        // compensated sums keep ell_n and its gradient accurate enough for the line search at large n
        detail::CompensatedSum ll;
        std::vector<detail::CompensatedSum> score(k);
        Eigen::MatrixXd pp = with_hessian ? Eigen::MatrixXd::Zero(K, K) : Eigen::MatrixXd();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            detail::softmax_row(m, i, zeta.values, p);
            ll.add(std::log(p[l]));
            for (std::size_t r = 0; r < k; ++r) score[r].add((r == l ? 1.0 : 0.0) - p[r]);
            if (with_hessian)
                for (Eigen::Index r = 0; r < K; ++r)
                    for (Eigen::Index s = r; s < K; ++s) pp(r, s) += p[static_cast<std::size_t>(r)] * p[static_cast<std::size_t>(s)];
        }
        out.value += wl * ll.value();
        for (std::size_t r = 0; r < k; ++r) out.gradient(static_cast<Eigen::Index>(r)) += wl * score[r].value();
        if (with_hessian) {
            for (Eigen::Index r = 0; r < K; ++r) {
                double off = 0.0;
                for (Eigen::Index s = 0; s < K; ++s)
                    if (s != r) off += s > r ? pp(r, s) : pp(s, r);
                out.hessian(r, r) -= wl * off;
                for (Eigen::Index s = r + 1; s < K; ++s) {
                    out.hessian(r, s) += wl * pp(r, s);
                    out.hessian(s, r) = out.hessian(r, s);
                }
            }
        }
    }
    return out;
}

/// ell_n(zeta) = sum_l w_l sum_i log p_l(X_i^{(l)}, zeta).
inline double quasi_log_likelihood(const EvaluatedSamples& ev, const ZetaVector& zeta, const StageWeights& weights) {
    return quasi_likelihood_full(ev, zeta, weights, false).value;
}

/// d ell_n / d zeta_r = w_r n_r - sum_l w_l sum_i p_r(X_i^{(l)}, zeta).
inline Eigen::VectorXd qll_gradient(const EvaluatedSamples& ev, const ZetaVector& zeta, const StageWeights& weights) {
    return quasi_likelihood_full(ev, zeta, weights, false).gradient;
}

// ---------------------------------------------------------------------------
// Constrained maximization

struct MaximizeOptions {
    /// Convergence threshold on the max-norm of the projected gradient divided by the
    /// total sample size n.
    double tol = 1e-10;
    int max_iterations = 200;
};

struct MaximizeResult {
    ZetaVector zeta;
    int iterations = 0;
    /// max-norm of the projected gradient, unscaled
    double grad_norm = 0.0;
    std::vector<double> trace;  // ell_n at every accepted iterate, starting with init
};

/// Newton's method with backtracking on the free coordinates theta = zeta_1..zeta_{k-1},
/// zeta_k = -sum(theta). ell_n is concave, so the line search only has to guard against
/// overshooting.
inline MaximizeResult maximize_constrained(const EvaluatedSamples& ev, const StageWeights& weights,
                                           const ZetaVector& init, const MaximizeOptions& opt = {}) {
    const std::size_t k = ev.chains();
    check_shapes(ev, init, weights);
    const double n = static_cast<double>(ev.total());
    const auto K = static_cast<Eigen::Index>(k);

    MaximizeResult res;
    res.zeta = init.centered();
    if (k == 1) {
        res.trace.push_back(quasi_log_likelihood(ev, res.zeta, weights));
        return res;
    }

    auto project_grad = [&](const Eigen::VectorXd& g) {
        return Eigen::VectorXd(g.head(K - 1).array() - g(K - 1));
    };
    auto project_hess = [&](const Eigen::MatrixXd& h) {
        Eigen::MatrixXd out(K - 1, K - 1);
        for (Eigen::Index i = 0; i < K - 1; ++i)
            for (Eigen::Index j = 0; j < K - 1; ++j)
                out(i, j) = h(i, j) - h(i, K - 1) - h(K - 1, j) + h(K - 1, K - 1);
        return out;
    };
    auto lift = [&](const Eigen::VectorXd& step) {
        Eigen::VectorXd full(K);
        full.head(K - 1) = step;
        full(K - 1) = -step.sum();
        return full;
    };

    QuasiLikelihood q = quasi_likelihood_full(ev, res.zeta, weights);
    res.trace.push_back(q.value);
    for (int it = 0;; ++it) {
        Eigen::VectorXd g = project_grad(q.gradient);
        res.grad_norm = g.cwiseAbs().maxCoeff();
        res.iterations = it;
        if (res.grad_norm <= opt.tol * n) return res;
        if (it >= opt.max_iterations) break;

        const Eigen::MatrixXd h = project_hess(q.hessian);
        Eigen::VectorXd step = (-h).ldlt().solve(g);
        if (!step.allFinite()) step = g / n;  // fall back to a scaled ascent direction
        const double slope = g.dot(step);

        // Once the predicted increase is below the rounding floor of ell_n, the line search
        // can no longer tell steps apart: take the Newton step and stop.
        const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(q.value));
        if (0.5 * slope <= floor) {
            ZetaVector cand{(res.zeta.values + lift(step))};
            cand = cand.centered();
            QuasiLikelihood qc = quasi_likelihood_full(ev, cand, weights);
            const double cand_norm = project_grad(qc.gradient).cwiseAbs().maxCoeff();
            if (std::isfinite(qc.value) && cand_norm <= res.grad_norm) {
                res.zeta = cand;
                res.grad_norm = cand_norm;
                res.iterations = it + 1;
                res.trace.push_back(std::max(qc.value, q.value));
            }
            return res;
        }

        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            ZetaVector cand{(res.zeta.values + t * lift(step))};
            cand = cand.centered();
            QuasiLikelihood qc = quasi_likelihood_full(ev, cand, weights);
            const bool armijo = qc.value >= q.value + 1e-4 * t * slope;
            // within rounding of ell_n, fall back to requiring a smaller projected gradient
            const bool flat = qc.value >= q.value - floor &&
                              project_grad(qc.gradient).cwiseAbs().maxCoeff() < res.grad_norm;
            if (std::isfinite(qc.value) && (armijo || flat)) {
                res.zeta = cand;
                q = std::move(qc);
                moved = true;
                break;
            }
        }
        if (!moved) {
            // At the floating-point floor ell_n cannot be increased any further; accept the
            // iterate when its gradient is already negligible on the scale of n.
            if (res.grad_norm <= 1e-8 * n) return res;
            break;
        }
        res.trace.push_back(q.value);
    }
    std::vector<double> best(res.zeta.values.data(), res.zeta.values.data() + res.zeta.values.size());
    throw ConvergenceFailure("quasi-likelihood maximization did not converge (gradient max-norm " +
                                 std::to_string(res.grad_norm) + ")",
                             std::move(best), res.grad_norm);
}

// ---------------------------------------------------------------------------
// From zeta to d, and the covariance pieces

/// d_j = exp(zeta_1 - zeta_j) a_j / a_1 for j = 2..k.
inline Eigen::VectorXd zeta_to_d(const ZetaVector& zeta, const StageWeights& weights) {
    const auto k = static_cast<Eigen::Index>(zeta.size());
    const Eigen::VectorXd& a = weights.a();
    Eigen::VectorXd d(k - 1);
    for (Eigen::Index j = 1; j < k; ++j) d(j - 1) = std::exp(zeta.values(0) - zeta.values(j)) * a(j) / a(0);
    return d;
}

/// Gradient of the zeta -> d map: first row (d_2..d_k), then -d_j on the diagonal below.
inline Eigen::MatrixXd gradient_map_D(const Eigen::VectorXd& d_hat) {
    const auto km1 = d_hat.size();
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(km1 + 1, km1);
    for (Eigen::Index j = 0; j < km1; ++j) {
        D(0, j) = d_hat(j);
        D(j + 1, j) = -d_hat(j);
    }
    return D;
}

/// B_rr = sum_l a_l mean_i[p_r (1 - p_r)],  B_rs = -sum_l a_l mean_i[p_r p_s].
inline Eigen::MatrixXd estimate_B(const EvaluatedSamples& ev, const ZetaVector& zeta, const StageWeights& weights) {
    check_shapes(ev, zeta, weights);
    const auto K = static_cast<Eigen::Index>(ev.chains());
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, K);
    std::vector<double> p(static_cast<std::size_t>(K));
    for (std::size_t l = 0; l < ev.chains(); ++l) {
        const Eigen::MatrixXd& m = ev.log_nu[l];
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(K, K);
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            detail::softmax_row(m, i, zeta.values, p);
            for (Eigen::Index r = 0; r < K; ++r) {
                const double pr = p[static_cast<std::size_t>(r)];
                for (Eigen::Index s = r + 1; s < K; ++s) acc(r, s) -= pr * p[static_cast<std::size_t>(s)];
            }
        }
        B += (weights.a()(static_cast<Eigen::Index>(l)) / static_cast<double>(m.rows())) * acc;
    }
    // Fill the diagonal from the off-diagonal entries: p_r(1 - p_r) = sum_{s != r} p_r p_s.
    for (Eigen::Index r = 0; r < K; ++r)
        for (Eigen::Index s = r + 1; s < K; ++s) B(s, r) = B(r, s);
    for (Eigen::Index r = 0; r < K; ++r) {
        double off = 0.0;
        for (Eigen::Index s = 0; s < K; ++s)
            if (s != r) off += B(r, s);
        B(r, r) = -off;
    }
    return B;
}

/// Omega = sum_l (n / n_l) a_l^2 Sigma^{(l)}, with Sigma^{(l)} the long-run covariance of the
/// k membership series of chain l.
inline Eigen::MatrixXd omega_from_chain_covs(const std::vector<Eigen::MatrixXd>& sigmas, const Eigen::VectorXd& a,
                                             const std::vector<std::size_t>& sizes) {
    const auto K = a.size();
    double n = 0.0;
    for (auto s : sizes) n += static_cast<double>(s);
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(sigmas.front().rows(), sigmas.front().cols());
    for (Eigen::Index l = 0; l < K; ++l)
        omega += (n / static_cast<double>(sizes[static_cast<std::size_t>(l)])) * a(l) * a(l) * sigmas[static_cast<std::size_t>(l)];
    return 0.5 * (omega + omega.transpose());
}

/// The same quantity assembled literally as A_n Sigma A_n^T with a block-diagonal Sigma
/// and A_n = ( -sqrt(n/n_1) a_1 I_k  ...  -sqrt(n/n_k) a_k I_k ).
inline Eigen::MatrixXd omega_blockwise(const std::vector<Eigen::MatrixXd>& sigmas, const Eigen::VectorXd& a,
                                       const std::vector<std::size_t>& sizes) {
    const auto K = a.size();
    double n = 0.0;
    for (auto s : sizes) n += static_cast<double>(s);
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(K, K * K);
    Eigen::MatrixXd Sigma = Eigen::MatrixXd::Zero(K * K, K * K);
    for (Eigen::Index l = 0; l < K; ++l) {
        A.block(0, l * K, K, K) =
            -std::sqrt(n / static_cast<double>(sizes[static_cast<std::size_t>(l)])) * a(l) * Eigen::MatrixXd::Identity(K, K);
        Sigma.block(l * K, l * K, K, K) = sigmas[static_cast<std::size_t>(l)];
    }
    return A * Sigma * A.transpose();
}

inline std::vector<Eigen::MatrixXd> membership_bm_covs(const EvaluatedSamples& ev, const ZetaVector& zeta,
                                                       const BatchMeansSpec& spec) {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& m : ev.log_nu) {
        const Eigen::MatrixXd p = membership_matrix(m, zeta);
        out.push_back(bm_cov(p, block_size(static_cast<std::size_t>(m.rows()), spec)));
    }
    return out;
}

inline Eigen::MatrixXd estimate_Omega(const EvaluatedSamples& ev, const ZetaVector& zeta, const StageWeights& weights,
                                      const BatchMeansSpec& spec = {}) {
    check_shapes(ev, zeta, weights);
    return omega_from_chain_covs(membership_bm_covs(ev, zeta, spec), weights.a(), ev.sizes());
}

/// V = D^T B^+ Omega B^+ D.
inline Eigen::MatrixXd covariance_V(const Eigen::MatrixXd& D, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Omega) {
    if (D.rows() != B.rows() || B.rows() != B.cols() || Omega.rows() != B.rows() || Omega.cols() != B.cols())
        throw InvalidParameter("covariance_V: inconsistent shapes");
    const Eigen::MatrixXd Bp = pseudo_inverse(B);
    const Eigen::MatrixXd M = Bp * D;
    Eigen::MatrixXd V = M.transpose() * Omega * M;
    return 0.5 * (V + V.transpose());
}

/// Stage-1 pipeline: maximize, map to d, then assemble B, Omega, D and V.
inline RatioEstimate estimate_d(const EvaluatedSamples& ev, const StageWeights& weights,
                                const BatchMeansSpec& spec = {}, const MaximizeOptions& opt = {}) {
    const std::size_t k = ev.chains();
    if (k < 2) throw InvalidParameter("estimate_d needs at least two chains");
    MaximizeResult mx = maximize_constrained(ev, weights, ZetaVector::zeros(k), opt);

    RatioEstimate out;
    out.zeta_hat = mx.zeta;
    out.iterations = mx.iterations;
    out.grad_norm = mx.grad_norm;
    out.n_per_chain = ev.sizes();
    out.a = weights.a();
    out.d_hat = zeta_to_d(mx.zeta, weights);
    out.B_hat = estimate_B(ev, mx.zeta, weights);
    out.Omega_hat = estimate_Omega(ev, mx.zeta, weights, spec);
    out.V_hat = covariance_V(gradient_map_D(out.d_hat), out.B_hat, out.Omega_hat);
    out.se = (out.V_hat.diagonal().array().max(0.0) / static_cast<double>(ev.total())).sqrt();
    return out;
}

template <class State>
RatioEstimate estimate_d(const SampleSet<State>& samples, const std::vector<UnnormalizedDensity<State>>& densities,
                         const StageWeights& weights, const BatchMeansSpec& spec = {}, const MaximizeOptions& opt = {}) {
    return estimate_d(evaluate_references(samples, densities), weights, spec, opt);
}

}  // namespace mcis
