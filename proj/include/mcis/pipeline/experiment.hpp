#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mcis/chain.hpp"
#include "mcis/density.hpp"
#include "mcis/errors.hpp"
#include "mcis/gen_is.hpp"
#include "mcis/parallel.hpp"
#include "mcis/pipeline/config.hpp"
#include "mcis/regen.hpp"
#include "mcis/reverse_logistic.hpp"
#include "mcis/rng.hpp"
#include "mcis/samplers.hpp"
#include "mcis/weights.hpp"

namespace mcis::pipeline {

/// Densities, targets and integrand built from a config.
template <class State>
struct Model {
    std::vector<UnnormalizedDensity<State>> refs;
    TargetFamily<State> family;
    std::optional<Integrand<State>> f;
};

template <class State>
Model<State> build_model(const ExperimentConfig& cfg) {
    constexpr bool continuous = std::is_floating_point_v<State>;
    if (continuous != (cfg.family == Family::t)) throw ConfigError("state type does not match the density family");
    Model<State> m;
    std::vector<UnnormalizedDensity<State>> targets;
    std::vector<std::map<std::string, double>> labels;
    if constexpr (continuous) {
        for (const auto& r : cfg.references) m.refs.push_back(t_density(r.df, r.mu, r.id));
        for (const auto& t : cfg.targets) {
            targets.push_back(t_density(t.df, t.mu, format_label({{"mu", t.mu}}, {})));
            labels.push_back({{"mu", t.mu}});
        }
    } else {
        for (const auto& r : cfg.references) m.refs.push_back(discrete_table_density(r.table, r.id));
        for (const auto& t : cfg.targets) {
            targets.push_back(discrete_table_density(t.table, t.label));
            labels.push_back({});
        }
    }
    m.family = TargetFamily<State>(std::move(targets), std::move(labels));
    if (cfg.integrand == IntegrandKind::identity) m.f = identity_integrand<State>();
    else if (cfg.integrand == IntegrandKind::constant) m.f = constant_integrand<State>(cfg.integrand_constant);
    return m;
}

// ---------------------------------------------------------------------------
// Sampling

/// Chain l of length n after burn-in and thinning.
template <class State>
ChainSample<State> draw_chain(const ExperimentConfig& cfg, const Model<State>& m, std::size_t l, std::size_t n,
                              std::uint64_t seed, bool with_regen) {
    const auto& r = cfg.references[l];
    const std::size_t raw = cfg.burn_in + (n - 1) * cfg.thinning + 1;
    const RegenOptions regen{with_regen, r.log_split_const};
    ChainSample<State> c;
    if constexpr (std::is_floating_point_v<State>) {
        if (r.sampler == SamplerKind::iid) c = sample_t_iid(r.df, r.mu, raw, seed, r.id, with_regen);
        else c = independence_mh(m.refs[l], t_proposal(r.proposal_df, r.proposal_mu), raw, seed, regen);
    } else {
        if (r.sampler == SamplerKind::iid) c = sample_table_iid(r.table, raw, seed, r.id, with_regen);
        else c = discrete_mh(m.refs[l], static_cast<int>(r.table.size()), raw, seed, regen);
    }
    return burn_and_thin(c, cfg.burn_in, cfg.thinning);
}

template <class State>
SampleSet<State> draw_stage(const ExperimentConfig& cfg, const Model<State>& m, const std::vector<std::size_t>& sizes,
                            SeedStream stream, std::size_t rep, bool with_regen, Stage stage) {
    std::vector<ChainSample<State>> chains(sizes.size());
    parallel_for(sizes.size(), cfg.threads, [&](std::size_t l) {
        chains[l] = draw_chain(cfg, m, l, sizes[l], derive_seed(cfg.master_seed, stream, l, rep), with_regen);
    });
    return SampleSet<State>(std::move(chains), stage);
}

// ---------------------------------------------------------------------------
// Stage 1

struct Stage1Result {
    RatioEstimate est;
    std::optional<Eigen::MatrixXd> V_rs;
    std::optional<Eigen::VectorXd> se_rs;
    std::optional<PilotResult> pilot;
};

/// Pilot-search grid: explicit points if given, else a simplex lattice.
inline std::vector<Eigen::VectorXd> pilot_grid(const ExperimentConfig& cfg) {
    std::vector<Eigen::VectorXd> grid;
    for (const auto& g : cfg.stage1_weights.grid) grid.push_back(Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())));
    if (grid.empty()) grid = simplex_lattice(cfg.k(), cfg.stage1_weights.lattice_resolution);
    return grid;
}

template <class State>
PilotResult run_pilot(const ExperimentConfig& cfg, const Model<State>& m, std::size_t rep = 0) {
    if (cfg.k() < 2) throw ConfigError("pilot weight search needs at least two references");
    const std::vector<std::size_t> sizes(cfg.k(), cfg.stage1_weights.pilot_size);
    const auto pilot = draw_stage(cfg, m, sizes, SeedStream::pilot, rep, false, Stage::stage1);
    return pilot_optimal_weight(evaluate_references(pilot, m.refs), pilot_grid(cfg), cfg.bm, cfg.threads);
}

template <class State>
Stage1Result run_stage1(const ExperimentConfig& cfg, const Model<State>& m, std::size_t rep = 0,
                        std::optional<std::vector<std::size_t>> sizes_override = std::nullopt) {
    const auto sizes = sizes_override ? *sizes_override : cfg.stage1_sizes;
    Stage1Result out;
    if (cfg.k() == 1) {
        // a single reference needs no ratio: d = (1) and V is empty
        out.est.d_hat = Eigen::VectorXd(0);
        out.est.V_hat = Eigen::MatrixXd(0, 0);
        out.est.se = Eigen::VectorXd(0);
        out.est.n_per_chain = sizes;
        out.est.a = Eigen::VectorXd::Ones(1);
        if (uses_rs(cfg.se_method)) {
            out.V_rs = Eigen::MatrixXd(0, 0);
            out.se_rs = Eigen::VectorXd(0);
        }
        return out;
    }

    Eigen::VectorXd a;
    switch (cfg.stage1_weights.kind) {
        case WeightKind::explicit_vector:
            a = Eigen::Map<const Eigen::VectorXd>(cfg.stage1_weights.a.data(), static_cast<Eigen::Index>(cfg.k()));
            break;
        case WeightKind::pilot_optimal:
            out.pilot = run_pilot(cfg, m, rep);
            a = out.pilot->weight;
            break;
        default:
            a = naive_weights(sizes);
    }

    const bool rs = uses_rs(cfg.se_method);
    const auto samples = draw_stage(cfg, m, sizes, SeedStream::stage1, rep, rs, Stage::stage1);
    const EvaluatedSamples ev = evaluate_references(samples, m.refs);
    out.est = estimate_d(ev, StageWeights(a, sizes), cfg.bm);
    if (rs) {
        out.V_rs = rs_covariance_d(ev, out.est, regen_marks_of(samples));
        out.se_rs = (out.V_rs->diagonal().array().max(0.0) / static_cast<double>(ev.total())).sqrt();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 2

struct Stage2Result {
    std::vector<TargetEstimate> bm;
    std::vector<TargetEstimate> rs;
    std::optional<TourStatistics> tours;  // tours of the first target
};

/// Stage-2 weight vector for each target.
template <class State>
WeightStrategyFn stage2_weight_fn(const ExperimentConfig& cfg, const SampleSet<State>& samples2) {
    const auto sizes = samples2.sizes();
    switch (cfg.stage2_weights.kind) {
        case WeightKind::explicit_vector: {
            Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(cfg.stage2_weights.a.data(), static_cast<Eigen::Index>(cfg.k()));
            a /= a.sum();
            return [a](std::size_t) { return a; };
        }
        case WeightKind::inv_dist:
        case WeightKind::ess_inv_dist: {
            std::vector<double> refs;
            for (const auto& r : cfg.references) refs.push_back(r.position());
            std::vector<double> positions;
            for (const auto& t : cfg.targets) positions.push_back(t.position());
            std::vector<double> mass;
            if (cfg.stage2_weights.kind == WeightKind::inv_dist) {
                mass.assign(sizes.begin(), sizes.end());
            } else {
                for (const auto& c : samples2.chains) {
                    std::vector<double> xs(c.states.begin(), c.states.end());
                    mass.push_back(effective_sample_size(xs, cfg.bm));
                }
            }
            return [refs, positions, mass](std::size_t t) { return ess_inv_dist_weights(positions[t], refs, mass); };
        }
        default: {
            Eigen::VectorXd a = naive_weights(sizes);
            return [a](std::size_t) { return a; };
        }
    }
}

/// Stage 2 given fixed stage-1 inputs, so it can be run against an injected d_hat / V_hat.
template <class State>
Stage2Result run_stage2(const ExperimentConfig& cfg, const Model<State>& m, const Stage1Result& s1, std::size_t rep = 0) {
    const bool rs = uses_rs(cfg.se_method);
    const auto samples2 = draw_stage(cfg, m, cfg.stage2_sizes, SeedStream::stage2, rep, rs, Stage::stage2);
    const EvaluatedSamples ev2 = evaluate_references(samples2, m.refs);
    const Eigen::VectorXd d_full = s1.est.full_d();
    const std::size_t N = s1.est.total();
    const WeightStrategyFn weights = stage2_weight_fn(cfg, samples2);
    const Integrand<State>* f = m.f ? &*m.f : nullptr;

    Stage2Result out;
    if (uses_bm(cfg.se_method)) {
        FamilyOptions opt{cfg.bm, coupling_q(ev2.total(), N, cfg.assume_infinite_stage1), cfg.tail_threshold, cfg.threads};
        out.bm = estimate_family(samples2, ev2, m.family, f, weights, d_full, s1.est.V_hat, opt);
    }
    if (rs) {
        const auto marks = regen_marks_of(samples2);
        std::optional<ChainValues> f_values;
        if (f) f_values = evaluate_on_chains<State>(samples2, f->eval);
        const Eigen::MatrixXd& W = s1.V_rs ? *s1.V_rs : s1.est.V_hat;
        out.rs.resize(m.family.size());
        std::vector<std::optional<TourStatistics>> tours(m.family.size());
        parallel_for(m.family.size(), cfg.threads, [&](std::size_t t) {
            TargetEstimate& e = out.rs[t];
            e.target_label = format_label(m.family.labels[t], m.family.targets[t].id);
            try {
                const ChainValues tv = evaluate_on_chains<State>(samples2, m.family.targets[t].log_eval);
                const Eigen::VectorXd w = weights(t).cwiseQuotient(d_full);
                TourStatistics ts = split_tours(marks, ev2, tv, f_values ? &*f_values : nullptr, w);
                const double q = coupling_q(ts.total_length(), N, cfg.assume_infinite_stage1);
                e.q = q;
                e.u_hat = rs_estimate_u(ts, w, d_full);
                const RSVariance vu = rs_variance(ts, false, w, d_full, W, q);
                e.var_stage1_u = vu.stage1;
                e.var_stage2_u = vu.stage2;
                e.se_u = vu.se();
                e.n = vu.n;
                if (f) {
                    e.eta_hat = rs_estimate_eta(ts, w, d_full);
                    const RSVariance ve = rs_variance(ts, true, w, d_full, W, q);
                    e.var_stage1_eta = ve.stage1;
                    e.var_stage2_eta = ve.stage2;
                    e.se_eta = ve.se();
                }
                if (t == 0) tours[t] = std::move(ts);
            } catch (const Error& err) {
                e = TargetEstimate{};
                e.target_label = format_label(m.family.labels[t], m.family.targets[t].id);
                e.error = err.what();
                e.flags.push_back("failed");
            }
        });
        out.tours = std::move(tours.front());
    }
    return out;
}

struct TwoStageResult {
    Stage1Result stage1;
    Stage2Result stage2;
    double q = 0.0;  // n / N as recorded, even when stage 1 is treated as exact
};

template <class State>
TwoStageResult run_two_stage(const ExperimentConfig& cfg, std::size_t rep = 0) {
    const Model<State> m = build_model<State>(cfg);
    TwoStageResult out;
    out.stage1 = run_stage1(cfg, m, rep);
    out.stage2 = run_stage2(cfg, m, out.stage1, rep);
    std::size_t n = 0;
    for (auto s : cfg.stage2_sizes) n += s;
    out.q = coupling_q(n, out.stage1.est.total(), false);
    return out;
}

/// Calls fn(State{}) with the state type matching the config's density family.
template <class Fn>
decltype(auto) dispatch_state(const ExperimentConfig& cfg, Fn&& fn) {
    if (cfg.family == Family::t) return fn(double{});
    return fn(int{});
}

// ---------------------------------------------------------------------------
// Known truths

struct Truth {
    Eigen::VectorXd d;                       // d_2..d_k
    std::vector<double> u;                   // m / m_1 per target
    std::vector<std::optional<double>> eta;  // E_pi f per target
};

/// Exact values when the config admits them: t densities are normalized, and table
/// densities are summed exhaustively.
inline std::optional<Truth> exact_truth(const ExperimentConfig& cfg) {
    Truth tr;
    const auto k = static_cast<Eigen::Index>(cfg.k());
    tr.d = Eigen::VectorXd::Ones(k - 1);
    if (cfg.family == Family::t) {
        for (const auto& t : cfg.targets) {
            tr.u.push_back(1.0);
            if (cfg.integrand == IntegrandKind::identity && t.df > 1.0) tr.eta.push_back(t.mu);
            else if (cfg.integrand == IntegrandKind::constant) tr.eta.push_back(cfg.integrand_constant);
            else tr.eta.push_back(std::nullopt);
        }
        return tr;
    }
    auto mass = [](const std::vector<double>& tab) {
        double s = 0.0;
        for (double v : tab) s += v;
        return s;
    };
    const double m1 = mass(cfg.references.front().table);
    for (Eigen::Index j = 1; j < k; ++j) tr.d(j - 1) = mass(cfg.references[static_cast<std::size_t>(j)].table) / m1;
    for (const auto& t : cfg.targets) {
        const double mt = mass(t.table);
        tr.u.push_back(mt / m1);
        if (cfg.integrand == IntegrandKind::identity) {
            double s = 0.0;
            for (std::size_t x = 0; x < t.table.size(); ++x) s += static_cast<double>(x) * t.table[x];
            tr.eta.push_back(s / mt);
        } else if (cfg.integrand == IntegrandKind::constant) {
            tr.eta.push_back(cfg.integrand_constant);
        } else {
            tr.eta.push_back(std::nullopt);
        }
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Replications

struct ReplicationRow {
    std::size_t replication = 0;
    std::size_t sample_size = 0;
    std::string method;
    double estimate = 0.0;
};

/// Summary of one component d_j at one stage-1 size, over all replications.
struct ComponentSummary {
    std::size_t sample_size = 0;  // total stage-1 size N
    std::size_t component = 0;    // j in d_j, from 2
    std::size_t count = 0;
    double truth = std::numeric_limits<double>::quiet_NaN();
    double mean_estimate = 0.0;
    double empirical_var = 0.0;  // N * sample variance of d_hat_j
    double mean_bm = std::numeric_limits<double>::quiet_NaN(), median_bm = std::numeric_limits<double>::quiet_NaN();
    double mean_rs = std::numeric_limits<double>::quiet_NaN(), median_rs = std::numeric_limits<double>::quiet_NaN();
    double coverage_bm = std::numeric_limits<double>::quiet_NaN(), coverage_rs = std::numeric_limits<double>::quiet_NaN();
};

/// Summary of u_hat or eta_hat for one target and one SE method.
struct TargetSummary {
    std::string label;
    std::string quantity;  // "u" or "eta"
    std::string method;    // "bm" or "rs"
    std::size_t count = 0;
    double truth = std::numeric_limits<double>::quiet_NaN();
    double mean_estimate = 0.0;
    double empirical_var = 0.0;  // n * sample variance
    double mean_var_est = 0.0, median_var_est = 0.0;
    double coverage = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicationReport {
    std::size_t replications = 0;
    std::size_t failures = 0;
    std::vector<std::string> errors;
    std::vector<ReplicationRow> rows;
    std::vector<ComponentSummary> components;
    std::vector<TargetSummary> targets;
};

namespace detail {

inline double mean_of(const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return x.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(x.size());
}

inline double sample_var(const std::vector<double>& x) {
    if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

inline double median_of(std::vector<double> x) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t h = x.size() / 2;
    std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(h), x.end());
    const double hi = x[h];
    if (x.size() % 2 == 1) return hi;
    const double lo = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(h));
    return 0.5 * (lo + hi);
}

inline double coverage_of(const std::vector<double>& est, const std::vector<double>& se, double truth, double z = 1.96) {
    if (est.empty() || std::isnan(truth)) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hit = 0;
    for (std::size_t i = 0; i < est.size(); ++i) hit += std::abs(est[i] - truth) <= z * se[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(est.size());
}

struct RepStage1 {
    std::size_t N = 0;
    Eigen::VectorXd d, var_bm, se_bm;
    std::optional<Eigen::VectorXd> var_rs, se_rs;
};

struct RepOutcome {
    std::vector<RepStage1> stage1;  // one per size
    std::optional<Stage2Result> stage2;
    std::optional<std::string> error;
};

}  // namespace detail

/// Stage-1 sizes visited by run_replications: the trace sizes (uniform per chain), then the
/// config's own sizes, which also feed stage 2.
inline std::vector<std::vector<std::size_t>> replication_sizes(const ExperimentConfig& cfg) {
    std::vector<std::vector<std::size_t>> out;
    for (auto n : cfg.trace_sizes) {
        std::vector<std::size_t> s(cfg.k(), n);
        if (s != cfg.stage1_sizes) out.push_back(s);
    }
    out.push_back(cfg.stage1_sizes);
    return out;
}

template <class State>
ReplicationReport run_replications(const ExperimentConfig& cfg) {
    if (cfg.replications < 2) throw ConfigError("replications must be at least 2");
    const Model<State> m = build_model<State>(cfg);
    const auto size_sets = replication_sizes(cfg);
    const bool with_rs = uses_rs(cfg.se_method);

    std::vector<detail::RepOutcome> reps(cfg.replications);
    // Replications run in the outer pool; inner steps stay serial.
    ExperimentConfig inner = cfg;
    inner.threads = 1;
    parallel_for(cfg.replications, cfg.threads, [&](std::size_t r) {
        auto& out = reps[r];
        try {
            Stage1Result last;
            for (const auto& sizes : size_sets) {
                last = run_stage1(inner, m, r, sizes);
                detail::RepStage1 s;
                s.N = last.est.total();
                s.d = last.est.d_hat;
                s.var_bm = last.est.V_hat.diagonal();
                s.se_bm = last.est.se;
                if (last.V_rs) {
                    s.var_rs = last.V_rs->diagonal();
                    s.se_rs = *last.se_rs;
                }
                out.stage1.push_back(std::move(s));
            }
            if (cfg.replicate_stage2) out.stage2 = run_stage2(inner, m, last, r);
        } catch (const Error& e) {
            out.error = e.what();
        }
    });

    ReplicationReport rep;
    rep.replications = cfg.replications;
    const auto truth = exact_truth(cfg);
    std::vector<std::size_t> ok;
    for (std::size_t r = 0; r < reps.size(); ++r) {
        if (reps[r].error) {
            ++rep.failures;
            rep.errors.push_back("replication " + std::to_string(r) + ": " + *reps[r].error);
        } else {
            ok.push_back(r);
        }
    }

    // long-format rows
    for (std::size_t r : ok) {
        for (const auto& s : reps[r].stage1) {
            for (Eigen::Index j = 0; j < s.d.size(); ++j) {
                const std::string c = std::to_string(j + 2);
                rep.rows.push_back({r, s.N, "d_hat_" + c, s.d(j)});
                rep.rows.push_back({r, s.N, "var_bm_" + c, s.var_bm(j)});
                if (s.var_rs) rep.rows.push_back({r, s.N, "var_rs_" + c, (*s.var_rs)(j)});
            }
        }
        if (const auto& s2 = reps[r].stage2) {
            auto emit = [&](const std::vector<TargetEstimate>& ests, const std::string& method) {
                for (const auto& e : ests) {
                    if (!e.ok()) continue;
                    rep.rows.push_back({r, e.n, "u_hat_" + method + ":" + e.target_label, e.u_hat});
                    rep.rows.push_back({r, e.n, "se_u_" + method + ":" + e.target_label, e.se_u});
                    if (e.eta_hat) {
                        rep.rows.push_back({r, e.n, "eta_hat_" + method + ":" + e.target_label, *e.eta_hat});
                        rep.rows.push_back({r, e.n, "se_eta_" + method + ":" + e.target_label, e.se_eta});
                    }
                }
            };
            emit(s2->bm, "bm");
            emit(s2->rs, "rs");
        }
    }

    // stage-1 summaries
    for (std::size_t si = 0; si < size_sets.size(); ++si) {
        if (ok.empty()) break;
        const std::size_t N = reps[ok.front()].stage1[si].N;
        const auto km1 = reps[ok.front()].stage1[si].d.size();
        for (Eigen::Index j = 0; j < km1; ++j) {
            std::vector<double> d, vb, sb, vr, sr;
            for (std::size_t r : ok) {
                const auto& s = reps[r].stage1[si];
                d.push_back(s.d(j));
                vb.push_back(s.var_bm(j));
                sb.push_back(s.se_bm(j));
                if (s.var_rs) {
                    vr.push_back((*s.var_rs)(j));
                    sr.push_back((*s.se_rs)(j));
                }
            }
            ComponentSummary c;
            c.sample_size = N;
            c.component = static_cast<std::size_t>(j) + 2;
            c.count = d.size();
            if (truth) c.truth = truth->d(j);
            c.mean_estimate = detail::mean_of(d);
            c.empirical_var = static_cast<double>(N) * detail::sample_var(d);
            c.mean_bm = detail::mean_of(vb);
            c.median_bm = detail::median_of(vb);
            c.coverage_bm = detail::coverage_of(d, sb, c.truth);
            if (with_rs) {
                c.mean_rs = detail::mean_of(vr);
                c.median_rs = detail::median_of(vr);
                c.coverage_rs = detail::coverage_of(d, sr, c.truth);
            }
            rep.components.push_back(c);
        }
    }

    // stage-2 summaries
    if (cfg.replicate_stage2 && !ok.empty()) {
        for (const std::string method : {"bm", "rs"}) {
            if ((method == "bm" && !uses_bm(cfg.se_method)) || (method == "rs" && !with_rs)) continue;
            for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
                for (const std::string quantity : {"u", "eta"}) {
                    std::vector<double> est, se, var;
                    std::string label;
                    std::size_t n = 0;
                    for (std::size_t r : ok) {
                        const auto& list = method == "bm" ? reps[r].stage2->bm : reps[r].stage2->rs;
                        const auto& e = list[t];
                        label = e.target_label;
                        if (!e.ok()) continue;
                        if (quantity == "u") {
                            est.push_back(e.u_hat);
                            se.push_back(e.se_u);
                            var.push_back(e.var_stage1_u + e.var_stage2_u);
                        } else if (e.eta_hat) {
                            est.push_back(*e.eta_hat);
                            se.push_back(e.se_eta);
                            var.push_back(e.var_stage1_eta + e.var_stage2_eta);
                        }
                        n = e.n;
                    }
                    if (est.empty()) continue;
                    TargetSummary s;
                    s.label = label;
                    s.quantity = quantity;
                    s.method = method;
                    s.count = est.size();
                    if (truth) {
                        if (quantity == "u") s.truth = truth->u[t];
                        else if (truth->eta[t]) s.truth = *truth->eta[t];
                    }
                    s.mean_estimate = detail::mean_of(est);
                    s.empirical_var = static_cast<double>(n) * detail::sample_var(est);
                    s.mean_var_est = detail::mean_of(var);
                    s.median_var_est = detail::median_of(var);
                    s.coverage = detail::coverage_of(est, se, s.truth);
                    rep.targets.push_back(s);
                }
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Oracle check on table densities

struct OracleCheck {
    std::string quantity;
    std::string method;
    double exact = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    bool within = false;  // |estimate - exact| <= 3 se
};

struct OracleReport {
    std::vector<OracleCheck> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.within) return false;
        return !checks.empty();
    }
};

inline OracleReport oracle_check(const ExperimentConfig& cfg, std::size_t rep = 0) {
    if (cfg.family != Family::table) throw ConfigError("oracle-check needs table densities");
    const Truth truth = *exact_truth(cfg);
    const TwoStageResult res = run_two_stage<int>(cfg, rep);
    OracleReport out;
    auto add = [&](std::string quantity, std::string method, double exact, double est, double se) {
        const double tol = 3.0 * se;
        out.checks.push_back({std::move(quantity), std::move(method), exact, est, se,
                              std::abs(est - exact) <= tol || est == exact});
    };
    for (Eigen::Index j = 0; j < truth.d.size(); ++j) {
        const std::string q = "d_" + std::to_string(j + 2);
        if (uses_bm(cfg.se_method)) add(q, "bm", truth.d(j), res.stage1.est.d_hat(j), res.stage1.est.se(j));
        if (res.stage1.se_rs) add(q, "rs", truth.d(j), res.stage1.est.d_hat(j), (*res.stage1.se_rs)(j));
    }
    auto add_targets = [&](const std::vector<TargetEstimate>& ests, const std::string& method) {
        for (std::size_t t = 0; t < ests.size(); ++t) {
            const auto& e = ests[t];
            if (!e.ok()) {
                out.checks.push_back({"u:" + e.target_label, method, truth.u[t], std::numeric_limits<double>::quiet_NaN(), 0.0, false});
                continue;
            }
            add("u:" + e.target_label, method, truth.u[t], e.u_hat, e.se_u);
            if (e.eta_hat && truth.eta[t]) add("eta:" + e.target_label, method, *truth.eta[t], *e.eta_hat, e.se_eta);
        }
    };
    add_targets(res.stage2.bm, "bm");
    add_targets(res.stage2.rs, "rs");
    return out;
}

}  // namespace mcis::pipeline
