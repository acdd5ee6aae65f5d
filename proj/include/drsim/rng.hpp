#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace drsim {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives an independent stream seed from a master seed, a stream tag and an
/// index. Every randomized stage of the pipeline owns one such stream so that
/// results do not depend on evaluation order or thread count.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) noexcept;

// The helpers below avoid std::*_distribution so that streams are identical
// across standard library implementations.

/// Uniform double in [0, 1) with 53 bits of randomness.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n). n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

/// Gamma(shape, 1) via Marsaglia-Tsang.
double gamma_variate(Rng& rng, double shape);

/// Beta(a, b) from two gamma variates.
double beta_variate(Rng& rng, double a, double b);

}  // namespace drsim
