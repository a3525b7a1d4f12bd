#pragma once

// Seeded RNG with a pinned algorithm (xoshiro256** seeded via splitmix64).
// All sampling helpers are implemented here rather than with
// std::*_distribution so that a given seed produces the same stream on
// every platform and standard library.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace profrec {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used for config hashes and for deriving per-entity seeds.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, bound) without modulo bias (rejection sampling).
    std::uint64_t uniform_u64(std::uint64_t bound) {
        assert(bound > 0);
        std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        assert(lo <= hi);
        return lo + static_cast<std::int64_t>(
                        uniform_u64(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

    // Box-Muller; the second value is cached, so draws come in a fixed stream.
    double normal(double mean, double stdev) {
        if (has_cached_) {
            has_cached_ = false;
            return mean + stdev * cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform_real();
        } while (u1 <= 0.0);
        double u2 = uniform_real();
        double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * M_PI * u2);
        has_cached_ = true;
        return mean + stdev * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_u64(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Child generator with a stream independent of the parent's.
    Rng derive(std::string_view tag) const {
        std::uint64_t mix = s_[0] ^ fnv1a64(tag);
        return Rng(mix);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace profrec
