#pragma once

#include <cmath>
#include <cstdint>
#include <iterator>
#include <utility>

// Deterministic PRNG stack used everywhere in the project:
// splitmix64 for seeding and seed derivation, xoshiro256** for streams,
// backward Fisher-Yates for shuffles. No std:: engines or distributions,
// so every stream is reproducible bit-for-bit across platforms.

namespace semeq {

// One splitmix64 step: advances `state` and returns the next output.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() { return splitmix64_next(state_); }

private:
    std::uint64_t state_;
};

// Derives an independent stream seed from a master seed and a lane index.
// Definition: hash-combine then one splitmix64 scramble.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t lane) {
    std::uint64_t s = master ^ (lane + 0x9E3779B97F4A7C15ULL + (master << 6) + (master >> 2));
    return splitmix64_next(s);
}

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(master, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
    return mix_seed(mix_seed(master, a, b), c);
}

// xoshiro256** 1.0. State is seeded with four consecutive splitmix64 outputs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    std::uint64_t next() {
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

    // next() % n; the modulo bias is irrelevant at the n we use and keeps
    // the stream trivially reproducible in other languages.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    // Uniform double in [0,1) with 53 significant bits.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + unit() * (hi - lo); }

    bool bernoulli(double p) { return unit() < p; }

    // Box-Muller; consumes two uniforms per pair and caches the second value.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - unit();  // (0,1], keeps log() finite
        const double u2 = unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Backward Fisher-Yates: for i = n-1 .. 1, j = next() % (i+1), swap.
    template <typename It>
    void shuffle(It first, It last) {
        const auto n = std::distance(first, last);
        for (auto i = n - 1; i > 0; --i) {
            const auto j = static_cast<decltype(i)>(below(static_cast<std::uint64_t>(i) + 1));
            std::swap(first[i], first[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace semeq
