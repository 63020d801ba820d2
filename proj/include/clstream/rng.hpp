#pragma once

#include <cstdint>
#include <random>

namespace clstream {

using Rng = std::mt19937_64;

/// Named sub-streams derived from one master seed. Every stochastic
/// component of a run draws from its own stream so that adding draws to
/// one component never perturbs another.
enum class RngStream : std::uint64_t {
    dataset = 1,
    stream = 2,
    init = 3,
    train = 4,
    replay = 5,
    transform = 6,
    iid = 7,
    probe = 8,
};

// splitmix64 finalizer; decorrelates (seed, stream) pairs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, RngStream stream) {
    return Rng(mix_seed(seed, static_cast<std::uint64_t>(stream)));
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace clstream
