#pragma once

#include <cstdint>
#include <random>

namespace secsched {

// Seeded generator with distribution helpers built directly on the raw
// engine output, so streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Index in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1)); }

    double exponential(double rate);
    double normal();

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Derives an independent child seed; used to give each stream its own generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace secsched
