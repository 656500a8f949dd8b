#pragma once

#include <cstdint>
#include <random>

namespace bppn {

// splitmix64; used to derive independent sub-seeds from one master seed so
// that per-image / per-epoch streams stay stable no matter who consumes what.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix_seed(seed ^ mix_seed(stream));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix_seed(seed)); }

inline float uniform_float(Rng& rng, float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(rng);
}

inline float normal_float(Rng& rng, float mean, float stddev) {
    std::normal_distribution<float> d(mean, stddev);
    return d(rng);
}

}  // namespace bppn
