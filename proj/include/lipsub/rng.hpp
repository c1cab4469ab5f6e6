#pragma once

#include <cstdint>
#include <random>

namespace lipsub {

// All randomness in the library goes through these helpers so that outputs
// are bit-stable across standard-library versions (std distributions make
// no such promise).
using Rng = std::mt19937_64;

// Uniform in [0, 1).
inline double randu(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double randu(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * randu(rng);
}

// Standard normal via Box-Muller (one value per call, deterministic).
inline double randn(Rng& rng) {
    double u1 = 0.0;
    do {
        u1 = randu(rng);
    } while (u1 <= 0.0);
    const double u2 = randu(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Uniform integer in [0, n).
inline std::uint64_t randint(Rng& rng, std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

// Derive an independent stream from a base seed and a purpose tag
// (splitmix64 finalizer).
inline Rng substream(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
}

}  // namespace lipsub
