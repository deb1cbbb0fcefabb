#pragma once

#include <cstdint>

namespace pdistill {

/// SplitMix64 step; used to expand seeds into generator state.
std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** with explicit stream derivation. Distribution code is local so that
/// results do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform01();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    /// Uniform integer in [lo, hi], unbiased.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);
    /// Standard normal via Box-Muller (no cached second draw).
    double normal();
    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    /// Independent child stream keyed by `stream`.
    Rng split(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

}  // namespace pdistill
