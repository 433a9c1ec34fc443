#pragma once

#include <cstdint>
#include <random>

namespace dotfoundry {

/// Seeded generator for every stochastic path in the library.
///
/// The integer engine is std::mt19937_64, whose output sequence is fixed by
/// the C++ standard. The distributions below are implemented here rather than
/// taken from <random> because the standard leaves their algorithms to the
/// library vendor, which would break run-to-run reproducibility across
/// toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent stream for (seed, stream) pairs, e.g. one per Monte-Carlo trial.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_index);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double low, double high) { return low + (high - low) * uniform(); }

    /// Standard normal via the polar Box-Muller method (no cached spare).
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Poisson variate. Inversion by multiplication for small means, Hörmann's
    /// PTRS transformed rejection otherwise.
    std::int64_t poisson(double mean);

    /// Gamma(shape, scale) by Marsaglia-Tsang.
    double gamma(double shape, double scale);

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dotfoundry
