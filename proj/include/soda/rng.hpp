#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "soda/error.hpp"

namespace soda {

// splitmix64 step. Every stochastic choice in the project flows through this
// mixer so results are reproducible bit-for-bit across compilers; the
// <random> distributions are implementation-defined and unusable for that.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives a child seed from a master seed and a tuple of words (counter-based
// streams: the same tuple always names the same stream).
inline uint64_t derive_seed(uint64_t seed) { return seed; }

template <typename... Rest>
uint64_t derive_seed(uint64_t seed, uint64_t word, Rest... rest) {
    return derive_seed(mix64(seed ^ mix64(word)), static_cast<uint64_t>(rest)...);
}

// Named sub-stream, e.g. stream_seed(master, "x_T").
inline uint64_t stream_seed(uint64_t master, std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return mix64(master ^ mix64(h));
}

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    uint32_t next_below(uint32_t bound) {
        if (bound == 0) fail(ErrorCode::invalid_argument, "next_below: bound must be positive");
        return static_cast<uint32_t>(next_u64() % bound);
    }

    // Standard normal via Box-Muller, caching the spare.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // k distinct positions out of [0, population), returned sorted ascending.
    std::vector<int> sample_without_replacement(int population, int k) {
        if (population < 0 || k < 0 || k > population)
            fail(ErrorCode::invalid_argument, "sample_without_replacement: bad sizes");
        std::vector<int> idx(static_cast<size_t>(population));
        for (int i = 0; i < population; ++i) idx[static_cast<size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + static_cast<int>(next_below(static_cast<uint32_t>(population - i)));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(k));
        std::sort(idx.begin(), idx.end());
        return idx;
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace soda
