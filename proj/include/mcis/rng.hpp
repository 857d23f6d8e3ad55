#pragma once

#include <cstdint>
#include <random>

namespace mcis {

using Engine = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for one (stream, chain, replication) cell. Index based, so results do not
/// depend on the order in which worker threads pick up work.
///
/// `stream` separates independent uses of the same master seed (stage 1, stage 2, pilot).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t chain,
                                    std::uint64_t replication) noexcept {
    std::uint64_t s = mix64(master);
    s = mix64(s ^ (stream + 0x632be59bd9b4e019ULL));
    s = mix64(s ^ (chain + 0x85157af5ULL));
    s = mix64(s ^ (replication + 0x2545f4914f6cdd1dULL));
    return s;
}

enum class SeedStream : std::uint64_t { stage1 = 1, stage2 = 2, pilot = 3, tuning = 4 };

constexpr std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t chain,
                                    std::uint64_t replication) noexcept {
    return derive_seed(master, static_cast<std::uint64_t>(stream), chain, replication);
}

}  // namespace mcis
