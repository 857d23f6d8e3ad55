#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcis/batch_means.hpp"
#include "mcis/errors.hpp"
#include "mcis/weights.hpp"

namespace mcis::pipeline {

using json = nlohmann::json;

enum class Family { t, table };
enum class SamplerKind { iid, imh, discrete_mh };
enum class SeMethod { bm, rs, both };

inline SeMethod parse_se_method(const std::string& s) {
    if (s == "bm") return SeMethod::bm;
    if (s == "rs") return SeMethod::rs;
    if (s == "both") return SeMethod::both;
    throw ConfigError("se_method must be bm, rs or both (got '" + s + "')");
}

inline const char* to_string(SeMethod m) {
    switch (m) {
        case SeMethod::bm: return "bm";
        case SeMethod::rs: return "rs";
        case SeMethod::both: return "both";
    }
    return "?";
}

inline bool uses_bm(SeMethod m) { return m != SeMethod::rs; }
inline bool uses_rs(SeMethod m) { return m != SeMethod::bm; }

struct ReferenceSpec {
    std::string id;
    Family family = Family::t;
    double df = 5.0;
    double mu = 0.0;
    std::vector<double> table;
    std::optional<double> label_mu;  // position used by inverse-distance weights
    SamplerKind sampler = SamplerKind::iid;
    double proposal_df = 5.0;
    double proposal_mu = 0.0;
    std::optional<double> log_split_const;

    double position() const {
        if (family == Family::t) return mu;
        if (!label_mu) throw ConfigError("reference '" + id + "' needs a 'mu' label for inverse-distance weights");
        return *label_mu;
    }
};

struct TargetSpec {
    std::string label;
    double df = 5.0;
    double mu = 0.0;
    std::vector<double> table;
    std::optional<double> label_mu;

    double position() const {
        if (!label_mu) throw ConfigError("target '" + label + "' needs a 'mu' label for inverse-distance weights");
        return *label_mu;
    }
};

enum class IntegrandKind { none, identity, constant };

struct Stage1WeightSpec {
    WeightKind kind = WeightKind::naive;
    std::vector<double> a;
    std::size_t pilot_size = 1000;
    std::vector<std::vector<double>> grid;
    std::size_t lattice_resolution = 50;
};

struct Stage2WeightSpec {
    WeightKind kind = WeightKind::naive;
    std::vector<double> a;
};

struct ExperimentConfig {
    std::uint64_t master_seed = 1;
    Family family = Family::t;
    std::vector<ReferenceSpec> references;
    std::vector<std::size_t> stage1_sizes, stage2_sizes;
    std::size_t burn_in = 0, thinning = 1;
    Stage1WeightSpec stage1_weights;
    Stage2WeightSpec stage2_weights;
    std::vector<TargetSpec> targets;
    IntegrandKind integrand = IntegrandKind::none;
    double integrand_constant = 1.0;
    BatchMeansSpec bm;
    std::size_t replications = 100;
    std::vector<std::size_t> trace_sizes;  // per-chain stage-1 sizes for replication traces
    bool replicate_stage2 = true;
    SeMethod se_method = SeMethod::bm;
    bool assume_infinite_stage1 = false;
    double tail_threshold = 1e3;
    unsigned threads = 0;
    std::string output_dir = "out";

    std::size_t k() const noexcept { return references.size(); }

    void validate() const {
        if (references.empty()) throw ConfigError("at least one reference density is required");
        for (std::size_t i = 0; i < references.size(); ++i)
            for (std::size_t j = i + 1; j < references.size(); ++j)
                if (references[i].id == references[j].id) throw ConfigError("duplicate reference id '" + references[i].id + "'");
        if (stage1_sizes.size() != k() || stage2_sizes.size() != k())
            throw ConfigError("stage sizes must have one entry per reference");
        for (auto s : stage1_sizes)
            if (s == 0) throw ConfigError("stage-1 sizes must be positive");
        for (auto s : stage2_sizes)
            if (s == 0) throw ConfigError("stage-2 sizes must be positive");
        if (thinning == 0) throw ConfigError("thinning must be at least 1");
        if (targets.empty()) throw ConfigError("target family must be non-empty");
        for (const auto& r : references) {
            if (r.family != family) throw ConfigError("all references must share one family");
            if (r.family == Family::t && r.sampler == SamplerKind::discrete_mh)
                throw ConfigError("reference '" + r.id + "': discrete_mh needs a table density");
            if (r.family == Family::table && r.sampler == SamplerKind::imh)
                throw ConfigError("reference '" + r.id + "': use discrete_mh for table densities");
            if (uses_rs(se_method) && r.sampler != SamplerKind::iid && (burn_in > 0 || thinning > 1))
                throw ConfigError("regenerative SEs need unthinned Markov chains without burn-in");
        }
        if (stage1_weights.kind == WeightKind::explicit_vector && stage1_weights.a.size() != k())
            throw ConfigError("explicit stage-1 weights need one entry per reference");
        if (stage1_weights.kind != WeightKind::naive && stage1_weights.kind != WeightKind::explicit_vector &&
            stage1_weights.kind != WeightKind::pilot_optimal)
            throw ConfigError("stage-1 weight strategy must be naive, explicit or pilot_optimal");
        if (stage2_weights.kind == WeightKind::pilot_optimal)
            throw ConfigError("pilot_optimal is a stage-1 strategy");
        if (stage2_weights.kind == WeightKind::explicit_vector && stage2_weights.a.size() != k())
            throw ConfigError("explicit stage-2 weights need one entry per reference");
        for (const auto& g : stage1_weights.grid)
            if (g.size() != k()) throw ConfigError("pilot grid points need one entry per reference");
        try {
            bm.validate();
        } catch (const InvalidParameter& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

inline std::vector<std::size_t> size_list(const json& j, const char* what) {
    std::vector<std::size_t> out;
    if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array");
    for (const auto& v : j) {
        if (!v.is_number_integer() || v.get<long long>() <= 0) throw ConfigError(std::string(what) + " entries must be positive integers");
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

inline std::vector<double> number_list(const json& j, const char* what) {
    if (!j.is_array()) throw ConfigError(std::string(what) + " must be an array");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) throw ConfigError(std::string(what) + " entries must be numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

inline Family parse_family(const std::string& s) {
    if (s == "t") return Family::t;
    if (s == "table") return Family::table;
    throw ConfigError("unknown density family '" + s + "'");
}

inline SamplerKind parse_sampler(const std::string& s) {
    if (s == "iid") return SamplerKind::iid;
    if (s == "imh") return SamplerKind::imh;
    if (s == "discrete_mh") return SamplerKind::discrete_mh;
    throw ConfigError("unknown sampler '" + s + "'");
}

inline ReferenceSpec parse_reference(const json& j, std::size_t index) {
    if (!j.is_object()) throw ConfigError("reference entries must be objects");
    ReferenceSpec r;
    r.family = parse_family(get_or<std::string>(j, "family", "t"));
    r.sampler = parse_sampler(get_or<std::string>(j, "sampler", "iid"));
    if (r.family == Family::t) {
        r.df = get_or(j, "df", 5.0);
        r.mu = get_or(j, "mu", 0.0);
        if (!(r.df > 0.0)) throw ConfigError("reference df must be positive");
        r.label_mu = r.mu;
        if (j.contains("proposal")) {
            r.proposal_df = get_or(j.at("proposal"), "df", r.df);
            r.proposal_mu = get_or(j.at("proposal"), "mu", r.mu);
        } else if (r.sampler == SamplerKind::imh) {
            throw ConfigError("imh reference needs a 'proposal' {df, mu}");
        }
    } else {
        if (!j.contains("table")) throw ConfigError("table reference needs a 'table' array");
        r.table = number_list(j.at("table"), "table");
        if (r.table.size() < 2) throw ConfigError("table densities need at least two states");
        for (double v : r.table)
            if (!(v > 0.0)) throw ConfigError("table entries must be positive");
        if (j.contains("mu")) r.label_mu = j.at("mu").get<double>();
    }
    if (j.contains("log_split_const")) r.log_split_const = j.at("log_split_const").get<double>();
    r.id = get_or<std::string>(j, "id", "ref" + std::to_string(index + 1));
    return r;
}

inline std::vector<TargetSpec> parse_targets(const json& j, Family family) {
    std::vector<TargetSpec> out;
    if (family == Family::t) {
        const double df = get_or(j, "df", 5.0);
        if (!(df > 0.0)) throw ConfigError("target df must be positive");
        std::vector<double> mus;
        if (j.contains("mu")) {
            mus = number_list(j.at("mu"), "targets.mu");
        } else if (j.contains("mu_grid")) {
            const auto& g = j.at("mu_grid");
            const double from = get_or(g, "from", 0.0), to = get_or(g, "to", 1.0), step = get_or(g, "step", 0.25);
            if (!(step > 0.0) || to < from) throw ConfigError("mu_grid needs step > 0 and to >= from");
            const auto count = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9)) + 1;
            for (std::size_t i = 0; i < count; ++i) mus.push_back(from + static_cast<double>(i) * step);
        } else {
            throw ConfigError("t targets need 'mu' or 'mu_grid'");
        }
        for (double mu : mus) {
            TargetSpec t;
            t.df = df;
            t.mu = mu;
            t.label_mu = mu;
            out.push_back(t);
        }
    } else {
        if (!j.contains("tables")) throw ConfigError("table targets need a 'tables' array");
        std::size_t i = 0;
        for (const auto& e : j.at("tables")) {
            TargetSpec t;
            t.table = number_list(e.at("table"), "targets.tables[].table");
            if (t.table.size() < 2) throw ConfigError("table densities need at least two states");
            for (double v : t.table)
                if (!(v > 0.0)) throw ConfigError("table entries must be positive");
            t.label = get_or<std::string>(e, "label", "target" + std::to_string(++i));
            if (e.contains("mu")) t.label_mu = e.at("mu").get<double>();
            out.push_back(t);
        }
    }
    return out;
}

}  // namespace detail

namespace detail {

inline ExperimentConfig parse_config_impl(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    c.master_seed = get_or<std::uint64_t>(j, "master_seed", 1);

    if (!j.contains("references") || !j.at("references").is_array() || j.at("references").empty())
        throw ConfigError("config needs a non-empty 'references' array");
    for (std::size_t i = 0; i < j.at("references").size(); ++i)
        c.references.push_back(detail::parse_reference(j.at("references")[i], i));
    c.family = c.references.front().family;

    if (j.contains("stage1") || j.contains("stage2")) {
        if (!j.contains("stage1") || !j.contains("stage2")) throw ConfigError("give both 'stage1' and 'stage2' sizes");
        c.stage1_sizes = detail::size_list(j.at("stage1").at("sizes"), "stage1.sizes");
        c.stage2_sizes = detail::size_list(j.at("stage2").at("sizes"), "stage2.sizes");
    } else if (j.contains("total_budget")) {
        const auto total = detail::size_list(j.at("total_budget"), "total_budget");
        const double frac = get_or(j, "stage1_fraction", 0.8);
        if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("stage1_fraction must lie in (0, 1)");
        for (auto t : total) {
            const auto n1 = static_cast<std::size_t>(std::floor(frac * static_cast<double>(t)));
            if (n1 == 0 || n1 >= t) throw ConfigError("total_budget too small to split");
            c.stage1_sizes.push_back(n1);
            c.stage2_sizes.push_back(t - n1);
        }
    } else {
        throw ConfigError("config needs 'stage1'/'stage2' sizes or a 'total_budget'");
    }

    c.burn_in = get_or<std::size_t>(j, "burn_in", 0);
    c.thinning = get_or<std::size_t>(j, "thinning", 1);

    if (j.contains("stage1_weights")) {
        const auto& w = j.at("stage1_weights");
        c.stage1_weights.kind = parse_weight_kind(get_or<std::string>(w, "strategy", "naive"));
        if (w.contains("a")) c.stage1_weights.a = detail::number_list(w.at("a"), "stage1_weights.a");
        c.stage1_weights.pilot_size = get_or<std::size_t>(w, "pilot_size", 1000);
        c.stage1_weights.lattice_resolution = get_or<std::size_t>(w, "lattice_resolution", 50);
        if (w.contains("grid"))
            for (const auto& g : w.at("grid")) c.stage1_weights.grid.push_back(detail::number_list(g, "grid point"));
    }
    if (j.contains("stage2_weights")) {
        const auto& w = j.at("stage2_weights");
        c.stage2_weights.kind = parse_weight_kind(get_or<std::string>(w, "strategy", "naive"));
        if (w.contains("a")) c.stage2_weights.a = detail::number_list(w.at("a"), "stage2_weights.a");
    }

    if (!j.contains("targets")) throw ConfigError("config needs a 'targets' section");
    c.targets = detail::parse_targets(j.at("targets"), c.family);

    if (j.contains("integrand")) {
        const auto& f = j.at("integrand");
        if (f.is_string()) {
            const auto s = f.get<std::string>();
            if (s == "none") c.integrand = IntegrandKind::none;
            else if (s == "identity") c.integrand = IntegrandKind::identity;
            else throw ConfigError("integrand must be 'none', 'identity' or {\"constant\": c}");
        } else if (f.is_object() && f.contains("constant")) {
            c.integrand = IntegrandKind::constant;
            c.integrand_constant = f.at("constant").get<double>();
        } else {
            throw ConfigError("integrand must be 'none', 'identity' or {\"constant\": c}");
        }
    }

    c.bm.nu = get_or(j, "bm_nu", 0.5);
    if (j.contains("bm_block_size")) c.bm.explicit_b = j.at("bm_block_size").get<std::size_t>();
    c.replications = get_or<std::size_t>(j, "replications", 100);
    if (j.contains("trace_sizes")) c.trace_sizes = detail::size_list(j.at("trace_sizes"), "trace_sizes");
    c.replicate_stage2 = get_or(j, "replicate_stage2", true);
    c.se_method = parse_se_method(get_or<std::string>(j, "se_method", "bm"));
    c.assume_infinite_stage1 = get_or(j, "assume_infinite_stage1", false);
    c.tail_threshold = get_or(j, "tail_threshold", 1e3);
    c.threads = get_or<unsigned>(j, "threads", 0);
    c.output_dir = get_or<std::string>(j, "output_dir", "out");
    c.validate();
    return c;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
    try {
        return detail::parse_config_impl(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

}  // namespace mcis::pipeline
