#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace spar {

// Stateless 64-bit mix (splitmix64 finalizer). Used for counter-based
// parameter init and for deriving independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t seed, std::uint64_t counter) {
    return mix64(seed ^ mix64(counter));
}

// Derive a child seed from a parent seed and a purpose label, so that
// independent consumers (data shuffle, reparameterization, candidate
// sampling, ...) never share a stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return mix64(seed ^ h);
}

inline double u64_to_unit_double(std::uint64_t x) {
    // 53 top bits -> [0,1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// Counter-based uniform in [-bound, bound]; bit-deterministic for a given
// (seed, index) pair regardless of call order.
inline double counter_uniform(std::uint64_t seed, std::uint64_t index, double bound) {
    return (2.0 * u64_to_unit_double(mix64(seed, index)) - 1.0) * bound;
}

// xoshiro256** stream generator.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) {
        for (int i = 0; i < 4; ++i) s_[i] = mix64(seed, static_cast<std::uint64_t>(i) + 1);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1).
    double uniform() { return u64_to_unit_double(next_u64()); }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Always consumes exactly two uniforms
    // and returns the cosine branch, so streams stay aligned.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift; bias is negligible for n << 2^64 and the result is
        // deterministic, which is what the pipeline needs.
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

}  // namespace spar
