#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mcis/errors.hpp"
#include "mcis/gen_is.hpp"
#include "mcis/pipeline/experiment.hpp"
#include "mcis/regen.hpp"
#include "mcis/reverse_logistic.hpp"

namespace mcis::pipeline {

namespace detail {

/// Shortest text that round-trips; empty for NaN so CSV readers see a missing value.
inline std::string num(double x) {
    if (std::isnan(x)) return {};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline json json_num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_num(v(i)));
    return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(json_num(m(r, c)));
        a.push_back(row);
    }
    return a;
}

inline std::string join_flags(const std::vector<std::string>& flags) {
    std::string out;
    for (const auto& f : flags) out += (out.empty() ? "" : ";") + f;
    return out;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw Error("cannot write '" + p.string() + "'");
    return os;
}

}  // namespace detail

/// {d_hat[], V_hat[][], se[], n_per_chain[], a[], iterations, grad_norm}, plus RS pieces when present.
inline json ratio_estimate_json(const RatioEstimate& est, const std::optional<Eigen::MatrixXd>& V_rs = std::nullopt,
                                const std::optional<Eigen::VectorXd>& se_rs = std::nullopt) {
    json j;
    j["d_hat"] = detail::to_json(est.d_hat);
    j["V_hat"] = detail::to_json(est.V_hat);
    j["se"] = detail::to_json(est.se);
    j["n_per_chain"] = est.n_per_chain;
    j["a"] = detail::to_json(est.a);
    j["iterations"] = est.iterations;
    j["grad_norm"] = detail::json_num(est.grad_norm);
    if (V_rs) j["V_rs"] = detail::to_json(*V_rs);
    if (se_rs) j["se_rs"] = detail::to_json(*se_rs);
    return j;
}

/// Columns j,d_hat,se_bm,se_rs; se_rs is empty when RS is not active.
inline void write_d_estimate_csv(std::ostream& os, const RatioEstimate& est,
                                 const std::optional<Eigen::VectorXd>& se_rs = std::nullopt) {
    os << "j,d_hat,se_bm,se_rs\n";
    for (Eigen::Index j = 0; j < est.d_hat.size(); ++j)
        os << (j + 2) << ',' << detail::num(est.d_hat(j)) << ',' << detail::num(est.se(j)) << ','
           << (se_rs ? detail::num((*se_rs)(j)) : std::string()) << '\n';
}

inline void write_targets_csv(std::ostream& os, const std::vector<TargetEstimate>& ests) {
    using detail::num;
    os << "target_label,u_hat,eta_hat,se_u,se_eta,var_stage1_u,var_stage2_u,var_stage1_eta,var_stage2_eta,q,n,flags\n";
    for (const auto& e : ests) {
        const bool ok = e.ok();
        const bool eta = ok && e.eta_hat.has_value();
        os << e.target_label << ',' << (ok ? num(e.u_hat) : "") << ',' << (eta ? num(*e.eta_hat) : "") << ','
           << (ok ? num(e.se_u) : "") << ',' << (eta ? num(e.se_eta) : "") << ',' << (ok ? num(e.var_stage1_u) : "")
           << ',' << (ok ? num(e.var_stage2_u) : "") << ',' << (eta ? num(e.var_stage1_eta) : "") << ','
           << (eta ? num(e.var_stage2_eta) : "") << ',' << num(e.q) << ',' << e.n << ',' << detail::join_flags(e.flags)
           << '\n';
    }
}

inline void write_replications_csv(std::ostream& os, const std::vector<ReplicationRow>& rows) {
    os << "replication,sample_size,method,estimate\n";
    for (const auto& r : rows) os << r.replication << ',' << r.sample_size << ',' << r.method << ',' << detail::num(r.estimate) << '\n';
}

inline json replication_report_json(const ReplicationReport& rep) {
    using detail::json_num;
    json j;
    j["replications"] = rep.replications;
    j["failures"] = rep.failures;
    j["errors"] = rep.errors;
    j["components"] = json::array();
    for (const auto& c : rep.components) {
        j["components"].push_back({{"sample_size", c.sample_size},
                                   {"component", c.component},
                                   {"count", c.count},
                                   {"truth", json_num(c.truth)},
                                   {"mean_estimate", json_num(c.mean_estimate)},
                                   {"empirical_var", json_num(c.empirical_var)},
                                   {"mean_bm", json_num(c.mean_bm)},
                                   {"median_bm", json_num(c.median_bm)},
                                   {"mean_rs", json_num(c.mean_rs)},
                                   {"median_rs", json_num(c.median_rs)},
                                   {"coverage_bm", json_num(c.coverage_bm)},
                                   {"coverage_rs", json_num(c.coverage_rs)}});
    }
    j["targets"] = json::array();
    for (const auto& t : rep.targets) {
        j["targets"].push_back({{"label", t.label},
                                {"quantity", t.quantity},
                                {"method", t.method},
                                {"count", t.count},
                                {"truth", json_num(t.truth)},
                                {"mean_estimate", json_num(t.mean_estimate)},
                                {"empirical_var", json_num(t.empirical_var)},
                                {"mean_var_est", json_num(t.mean_var_est)},
                                {"median_var_est", json_num(t.median_var_est)},
                                {"coverage", json_num(t.coverage)}});
    }
    return j;
}

inline json oracle_report_json(const OracleReport& rep) {
    json j;
    j["all_pass"] = rep.all_pass();
    j["checks"] = json::array();
    for (const auto& c : rep.checks)
        j["checks"].push_back({{"quantity", c.quantity},
                               {"method", c.method},
                               {"exact", detail::json_num(c.exact)},
                               {"estimate", detail::json_num(c.estimate)},
                               {"se", detail::json_num(c.se)},
                               {"within_3se", c.within}});
    return j;
}

inline void write_stage1_outputs(const std::filesystem::path& dir, const Stage1Result& s1) {
    std::filesystem::create_directories(dir);
    {
        auto os = detail::open_out(dir / "d_estimate.csv");
        write_d_estimate_csv(os, s1.est, s1.se_rs);
    }
    auto os = detail::open_out(dir / "d_estimate.json");
    os << ratio_estimate_json(s1.est, s1.V_rs, s1.se_rs).dump(2) << '\n';
}

inline void write_two_stage_outputs(const std::filesystem::path& dir, const TwoStageResult& res) {
    write_stage1_outputs(dir, res.stage1);
    if (!res.stage2.bm.empty()) {
        auto os = detail::open_out(dir / "targets.csv");
        write_targets_csv(os, res.stage2.bm);
    }
    if (!res.stage2.rs.empty()) {
        auto os = detail::open_out(dir / "targets_rs.csv");
        write_targets_csv(os, res.stage2.rs);
    }
    if (res.stage2.tours) {
        auto os = detail::open_out(dir / "tours.csv");
        write_tours_csv(os, *res.stage2.tours);
    }
}

inline void write_replication_outputs(const std::filesystem::path& dir, const ReplicationReport& rep) {
    std::filesystem::create_directories(dir);
    {
        auto os = detail::open_out(dir / "replications.csv");
        write_replications_csv(os, rep.rows);
    }
    auto os = detail::open_out(dir / "replication_report.json");
    os << replication_report_json(rep).dump(2) << '\n';
}

}  // namespace mcis::pipeline
