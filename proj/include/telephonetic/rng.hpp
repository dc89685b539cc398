#pragma once

// Deterministic random number generation. Standard-library distributions are
// implementation-defined, so every draw here is built directly on a splitmix64
// stream: identical seeds give identical sequences on every platform.
//
// All randomness in the pipeline flows from (global seed, stage name, item id)
// through Rng::derive, never from ambient entropy.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace telephonetic {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that adjacent small seeds do not start with similar words.
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53 bits of precision.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform in [0, n). Modulo bias is below 1e-15 for any n this project uses.
    std::uint64_t uniform_int(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller; consumes two uniforms per call, no cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Index draw proportional to non-negative weights (cumulative scan).
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double x = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (x < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Stream derivation: mixes the parent seed with a stage label and integer
    // ids into an independent child seed.
    static std::uint64_t derive(std::uint64_t seed, std::string_view stage,
                                std::initializer_list<std::uint64_t> ids = {}) {
        std::uint64_t s = seed ^ 0x6a09e667f3bcc908ULL;
        std::uint64_t h = fnv1a64(stage);
        s ^= splitmix64(h);
        for (std::uint64_t id : ids) {
            std::uint64_t t = id + 0x9e3779b97f4a7c15ULL;
            s ^= splitmix64(t);
            s = s * 0x2545f4914f6cdd1dULL + 1;
        }
        return s;
    }

    static Rng derived(std::uint64_t seed, std::string_view stage,
                       std::initializer_list<std::uint64_t> ids = {}) {
        return Rng(derive(seed, stage, ids));
    }

private:
    std::uint64_t state_;
};

}  // namespace telephonetic
