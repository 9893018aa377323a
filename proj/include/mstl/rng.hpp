#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mstl {

// Deterministic PRNG used everywhere the framework draws randomness.
// xoshiro256++ seeded through splitmix64. Distributions are implemented
// here instead of <random> so that streams are bit-identical across
// platforms and standard-library versions. The algorithm name below is
// recorded in checkpoint metadata.
class Rng {
public:
    static constexpr const char* kAlgorithm = "xoshiro256++/1.0";

    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform in [0,1) with 53 bits of mantissa.
    double uniform_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0,n). n must be > 0.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Box-Muller (cosine branch only, stateless between calls).
    float normal(float mean = 0.0f, float stddev = 1.0f) {
        double u1 = uniform_double();
        while (u1 <= 0.0) u1 = uniform_double();
        const double u2 = uniform_double();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
        return mean + stddev * static_cast<float>(z);
    }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream seed from a base seed and a stream tag.
    static uint64_t mix(uint64_t seed, uint64_t tag) {
        uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
        return splitmix64(x);
    }
    static uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
        return mix(mix(seed, a), b);
    }

private:
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
};

} // namespace mstl
