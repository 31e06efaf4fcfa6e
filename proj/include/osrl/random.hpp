#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace osrl {

// Mixes a 64-bit word (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x) noexcept;

// Counter-based uniform in the open interval (0, 1). The value depends only on
// (seed, stream, counter), so simulated paths are reproducible on any platform
// and any path can be regenerated without replaying the others.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) noexcept;

// Standard normal quantile function.
double normal_quantile(double p);

// Standard normal draw from the counter-based generator via inverse CDF.
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

// Derives an independent child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

/// Sequential generator used by training and evaluation.
///
/// Wraps mt19937_64 (whose output sequence is fixed by the standard) and does
/// its own conversions, since the std distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform();
    // Uniform in (0, 1).
    double uniform_open();
    // Uniform integer in [0, n). Requires n > 0.
    std::size_t index(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }
    double normal() { return normal_quantile(uniform_open()); }

private:
    std::mt19937_64 engine_;
};

}  // namespace osrl
