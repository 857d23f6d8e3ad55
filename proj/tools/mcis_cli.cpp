// Command-line driver for two-stage multiple-chain importance sampling.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mcis/mcis.hpp"
#include "mcis/pipeline/config.hpp"
#include "mcis/pipeline/experiment.hpp"
#include "mcis/pipeline/output.hpp"

namespace fs = std::filesystem;
using namespace mcis;
using namespace mcis::pipeline;

namespace {

enum ExitCode { ok = 0, failure = 1, config_error = 2, convergence_failure = 3, insufficient_data = 4 };

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> se_method;
    bool assume_infinite = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config, "experiment config (JSON)")->required();
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--out", o.out, "output directory override");
    sub->add_option("--se-method", o.se_method, "bm, rs or both")->check(CLI::IsMember({"bm", "rs", "both"}));
    sub->add_flag("--assume-infinite-stage1", o.assume_infinite, "drop the stage-1 variance term (q = 0)");
}

ExperimentConfig resolve(const CommonOptions& o) {
    ExperimentConfig cfg = load_config(o.config);
    if (o.seed) cfg.master_seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    if (o.se_method) cfg.se_method = parse_se_method(*o.se_method);
    if (o.assume_infinite) cfg.assume_infinite_stage1 = true;
    cfg.validate();
    return cfg;
}

void print_d(const Stage1Result& s1) {
    for (Eigen::Index j = 0; j < s1.est.d_hat.size(); ++j) {
        std::printf("d_%ld = %.6g  (se_bm %.3g", static_cast<long>(j + 2), s1.est.d_hat(j), s1.est.se(j));
        if (s1.se_rs) std::printf(", se_rs %.3g", (*s1.se_rs)(j));
        std::printf(")\n");
    }
}

int cmd_estimate_d(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    dispatch_state(cfg, [&](auto tag) {
        using State = decltype(tag);
        const auto m = build_model<State>(cfg);
        const Stage1Result s1 = run_stage1(cfg, m);
        write_stage1_outputs(dir, s1);
        print_d(s1);
    });
    return ok;
}

int cmd_estimate(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    dispatch_state(cfg, [&](auto tag) {
        using State = decltype(tag);
        const TwoStageResult res = run_two_stage<State>(cfg);
        write_two_stage_outputs(dir, res);
        print_d(res.stage1);
        std::size_t failed = 0;
        for (const auto& e : res.stage2.bm) failed += e.ok() ? 0 : 1;
        for (const auto& e : res.stage2.rs) failed += e.ok() ? 0 : 1;
        std::printf("%zu targets, q = %.4g, %zu failed; results in %s\n", res.stage2.bm.empty() ? res.stage2.rs.size() : res.stage2.bm.size(),
                    res.q, failed, dir.string().c_str());
    });
    return ok;
}

int cmd_replicate(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    dispatch_state(cfg, [&](auto tag) {
        using State = decltype(tag);
        const ReplicationReport rep = run_replications<State>(cfg);
        write_replication_outputs(dir, rep);
        std::printf("%zu replications, %zu failed\n", rep.replications, rep.failures);
        for (const auto& c : rep.components)
            std::printf("N=%zu d_%zu: N*Var=%.4g  BM median=%.4g  RS median=%.4g  coverage bm=%.3f\n", c.sample_size,
                        c.component, c.empirical_var, c.median_bm, c.median_rs, c.coverage_bm);
    });
    return ok;
}

int cmd_pilot(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    dispatch_state(cfg, [&](auto tag) {
        using State = decltype(tag);
        const auto m = build_model<State>(cfg);
        const PilotResult p = run_pilot(cfg, m);
        const auto grid = pilot_grid(cfg);
        std::ofstream os(dir / "pilot_weights.csv");
        os << "grid_index,a,trace\n";
        for (std::size_t g = 0; g < grid.size(); ++g) {
            std::string a;
            for (Eigen::Index i = 0; i < grid[g].size(); ++i) a += (i ? ";" : "") + pipeline::detail::num(grid[g](i));
            os << g << ',' << a << ',' << pipeline::detail::num(p.traces[g]) << '\n';
        }
        std::printf("selected a = (");
        for (Eigen::Index i = 0; i < p.weight.size(); ++i) std::printf("%s%.4g", i ? ", " : "", p.weight(i));
        std::printf("), trace(V) = %.4g\n", p.trace);
    });
    return ok;
}

int cmd_oracle(const ExperimentConfig& cfg) {
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    const OracleReport rep = oracle_check(cfg);
    std::ofstream(dir / "oracle_report.json") << oracle_report_json(rep).dump(2) << '\n';
    for (const auto& c : rep.checks)
        std::printf("%-4s %-20s exact %.6g  estimate %.6g  se %.3g  %s\n", c.method.c_str(), c.quantity.c_str(), c.exact,
                    c.estimate, c.se, c.within ? "ok" : "OUTSIDE 3 SE");
    std::printf("%s\n", rep.all_pass() ? "all estimates within 3 SE" : "some estimates outside 3 SE");
    return ok;
}

int cmd_export(const ExperimentConfig& cfg) {
    const fs::path dir = fs::path(cfg.output_dir) / "chains";
    fs::create_directories(dir);
    const bool regen = uses_rs(cfg.se_method);
    dispatch_state(cfg, [&](auto tag) {
        using State = decltype(tag);
        const auto m = build_model<State>(cfg);
        const auto s1 = draw_stage(cfg, m, cfg.stage1_sizes, SeedStream::stage1, 0, regen, Stage::stage1);
        const auto s2 = draw_stage(cfg, m, cfg.stage2_sizes, SeedStream::stage2, 0, regen, Stage::stage2);
        for (const auto& c : s1.chains) {
            std::ofstream os(dir / ("stage1_" + c.density_id + ".txt"));
            write_chain(os, c);
        }
        for (const auto& c : s2.chains) {
            std::ofstream os(dir / ("stage2_" + c.density_id + ".txt"));
            write_chain(os, c);
        }
    });
    std::printf("chains written to %s\n", dir.string().c_str());
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage generalized importance sampling with multiple Markov chains"};
    app.require_subcommand(1);

    CommonOptions opts;
    auto* estimate_d_cmd = app.add_subcommand("estimate-d", "stage 1: estimate the ratios d and their covariance");
    auto* estimate_cmd = app.add_subcommand("estimate", "both stages: d, then u and E f for every target");
    auto* replicate_cmd = app.add_subcommand("replicate", "repeat the experiment and compare SEs with empirical spread");
    auto* pilot_cmd = app.add_subcommand("pilot-weights", "grid search for the stage-1 weight minimizing trace(V)");
    auto* oracle_cmd = app.add_subcommand("oracle-check", "compare estimates with exact sums on table densities");
    auto* export_cmd = app.add_subcommand("export-chains", "write the stage-1 and stage-2 chains to text files");
    for (auto* sub : {estimate_d_cmd, estimate_cmd, replicate_cmd, pilot_cmd, oracle_cmd, export_cmd}) add_common(sub, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_error;
    }

    try {
        const ExperimentConfig cfg = resolve(opts);
        if (estimate_d_cmd->parsed()) return cmd_estimate_d(cfg);
        if (estimate_cmd->parsed()) return cmd_estimate(cfg);
        if (replicate_cmd->parsed()) return cmd_replicate(cfg);
        if (pilot_cmd->parsed()) return cmd_pilot(cfg);
        if (oracle_cmd->parsed()) return cmd_oracle(cfg);
        if (export_cmd->parsed()) return cmd_export(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return config_error;
    } catch (const ConvergenceFailure& e) {
        std::fprintf(stderr, "convergence failure: %s\n", e.what());
        return convergence_failure;
    } catch (const InsufficientData& e) {
        std::fprintf(stderr, "insufficient data: %s\n", e.what());
        return insufficient_data;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return failure;
    }
    return failure;
}
