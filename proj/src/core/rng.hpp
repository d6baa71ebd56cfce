#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "core/errors.hpp"

namespace spanforge {

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Deterministic RNG. The engine is std::mt19937_64 (its raw output is
// specified by the standard); all distribution mappings are implemented here
// because the standard library's distributions are implementation-defined and
// would break the byte-identical reproducibility contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Named sub-stream derivation: one root seed fans out to independent
    // streams ("corpus", "init", "batching", ...).
    static Rng stream(std::uint64_t root_seed, std::string_view name) {
        std::uint64_t h = fnv1a64(name);
        return Rng(splitmix(root_seed ^ h));
    }

    Rng substream(std::string_view name) { return stream(next(), name); }

    std::uint64_t next() { return eng_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        // Rejection sampling for an unbiased draw.
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw ContractError("Rng::range: hi < lo");
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Index drawn proportionally to non-negative weights.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw ContractError("Rng::categorical: weights must have positive sum");
        double x = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (x < acc) return i;
        }
        return weights.size() - 1;
    }

    // Geometric count with the given mean (mean > 0): number of failures
    // before the first success of a Bernoulli with p = 1 / (mean + 1).
    std::uint64_t geometric(double mean) {
        if (!(mean > 0.0)) return 0;
        double p = 1.0 / (mean + 1.0);
        double u = uniform01();
        if (u >= 1.0) u = 1.0 - 0x1.0p-53;
        double k = std::floor(std::log1p(-u) / std::log1p(-p));
        if (k < 0.0) k = 0.0;
        return static_cast<std::uint64_t>(k);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 eng_;
};

}  // namespace spanforge
