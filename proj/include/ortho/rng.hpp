#pragma once
// Deterministic RNG utilities.  Distributions are implemented by hand so the
// exact bit stream does not depend on the standard library implementation.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ortho {

// splitmix64, used both as a stream and as a seed mixer.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // modulo bias is negligible for the small n used here, but reject anyway
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do { v = next_u64(); } while (v >= limit);
        return v % n;
    }

    // standard normal via Box-Muller (one value per call, deterministic)
    double next_normal() {
        double u1 = next_double(), u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(6.283185307179586476925286766559 * u2);
    }
};

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
    Rng r(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
    return r.next_u64();
}

// Stable sub-seed derived from a master seed and a textual tag, so that the
// order in which components draw randomness never matters.
inline std::uint64_t sub_seed(std::uint64_t master, std::string_view tag,
                              std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (char c : tag) {
        h ^= std::uint64_t(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    return hash_mix(hash_mix(master, h), index);
}

} // namespace ortho
