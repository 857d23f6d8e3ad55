#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mcis/errors.hpp"

namespace mcis {

enum class ChainKind { iid, markov };

inline const char* to_string(ChainKind k) { return k == ChainKind::iid ? "iid" : "markov"; }

/// One simulated path tied to a single stationary density.
///
/// When present, `regen_marks[i]` is true when a regeneration tour starts at index i;
/// the first mark is always set.
template <class State>
struct ChainSample {
    std::string density_id;
    std::vector<State> states;
    ChainKind kind = ChainKind::markov;
    std::uint64_t seed = 0;
    std::optional<std::vector<bool>> regen_marks;

    std::size_t size() const noexcept { return states.size(); }
    bool has_regen() const noexcept { return regen_marks.has_value(); }

    void validate() const {
        if (states.empty()) throw InvalidParameter("chain '" + density_id + "' is empty");
        if (regen_marks) {
            if (regen_marks->size() != states.size())
                throw InvalidParameter("chain '" + density_id + "': regen marks length mismatch");
            if (!(*regen_marks)[0])
                throw InvalidParameter("chain '" + density_id + "': first regen mark must be set");
        }
    }

    /// Number of complete tours (marks after the first one close a tour).
    std::size_t complete_tours() const {
        if (!regen_marks) return 0;
        std::size_t marks = 0;
        for (bool m : *regen_marks) marks += m ? 1 : 0;
        return marks > 0 ? marks - 1 : 0;
    }
};

enum class Stage { stage1, stage2 };

/// k chains, one per reference density, all from the same stage.
template <class State>
struct SampleSet {
    std::vector<ChainSample<State>> chains;
    Stage stage = Stage::stage1;

    SampleSet() = default;
    SampleSet(std::vector<ChainSample<State>> c, Stage s) : chains(std::move(c)), stage(s) { validate(); }

    std::size_t k() const noexcept { return chains.size(); }

    std::size_t total() const noexcept {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.size();
        return n;
    }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> out;
        for (const auto& c : chains) out.push_back(c.size());
        return out;
    }

    void validate() const {
        if (chains.empty()) throw InvalidParameter("sample set needs at least one chain");
        std::unordered_set<std::string> ids;
        for (const auto& c : chains) {
            c.validate();
            if (!ids.insert(c.density_id).second)
                throw InvalidParameter("duplicate density id '" + c.density_id + "' in sample set");
        }
    }
};

/// Drop the first `burn_in` states then keep every `thin`-th one. A regeneration mark
/// survives thinning only for iid chains; Markov chains lose their marks since thinned
/// tours are no longer delimited by regenerations.
template <class State>
ChainSample<State> burn_and_thin(const ChainSample<State>& in, std::size_t burn_in, std::size_t thin) {
    if (thin == 0) throw InvalidParameter("thinning must be at least 1");
    if (burn_in == 0 && thin == 1) return in;
    if (burn_in >= in.size()) throw InsufficientData("burn-in consumes the whole chain '" + in.density_id + "'");
    ChainSample<State> out{in.density_id, {}, in.kind, in.seed, std::nullopt};
    for (std::size_t i = burn_in; i < in.size(); i += thin) out.states.push_back(in.states[i]);
    if (in.regen_marks && in.kind == ChainKind::iid) out.regen_marks = std::vector<bool>(out.size(), true);
    return out;
}

// ---------------------------------------------------------------------------
// Columnar text persistence:
//
//   # density_id <id>
//   # kind iid|markov
//   # seed <u64>
//   # n <count>
//   state[,regen]
//   <state>[,0|1]
//   ...

namespace detail {

template <class State>
std::string format_state(const State& x) {
    if constexpr (std::is_floating_point_v<State>) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(x));
        return buf;
    } else {
        return std::to_string(x);
    }
}

template <class State>
State parse_state(const std::string& s) {
    if constexpr (std::is_floating_point_v<State>) {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw InvalidParameter("bad state value '" + s + "'");
        return static_cast<State>(v);
    } else {
        State v{};
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size()) throw InvalidParameter("bad state value '" + s + "'");
        return v;
    }
}

}  // namespace detail

template <class State>
void write_chain(std::ostream& os, const ChainSample<State>& c) {
    os << "# density_id " << c.density_id << '\n'
       << "# kind " << to_string(c.kind) << '\n'
       << "# seed " << c.seed << '\n'
       << "# n " << c.size() << '\n'
       << (c.regen_marks ? "state,regen" : "state") << '\n';
    for (std::size_t i = 0; i < c.size(); ++i) {
        os << detail::format_state(c.states[i]);
        if (c.regen_marks) os << ',' << ((*c.regen_marks)[i] ? 1 : 0);
        os << '\n';
    }
}

template <class State>
ChainSample<State> read_chain(std::istream& is) {
    ChainSample<State> c;
    std::string line;
    std::size_t n = 0;
    bool have_n = false;
    while (std::getline(is, line)) {
        if (line.rfind("# ", 0) != 0) break;
        std::istringstream hs(line.substr(2));
        std::string key, value;
        hs >> key >> value;
        if (key == "density_id") c.density_id = value;
        else if (key == "kind") {
            if (value == "iid") c.kind = ChainKind::iid;
            else if (value == "markov") c.kind = ChainKind::markov;
            else throw InvalidParameter("unknown chain kind '" + value + "'");
        } else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "n") { n = std::stoull(value); have_n = true; }
    }
    if (!have_n) throw InvalidParameter("chain file missing '# n' header");
    bool with_regen;
    if (line == "state,regen") with_regen = true;
    else if (line == "state") with_regen = false;
    else throw InvalidParameter("chain file has unexpected column header '" + line + "'");

    c.states.reserve(n);
    std::vector<bool> marks;
    while (c.states.size() < n && std::getline(is, line)) {
        if (with_regen) {
            auto comma = line.find(',');
            if (comma == std::string::npos) throw InvalidParameter("missing regen column");
            c.states.push_back(detail::parse_state<State>(line.substr(0, comma)));
            marks.push_back(line.substr(comma + 1) == "1");
        } else {
            c.states.push_back(detail::parse_state<State>(line));
        }
    }
    if (c.states.size() != n) throw InvalidParameter("chain file truncated");
    if (with_regen) c.regen_marks = std::move(marks);
    c.validate();
    return c;
}

}  // namespace mcis
