#pragma once

#include <cstdint>
#include <random>

namespace decomp {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a
// base seed and a stream index so results do not depend on thread count.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t salt = 0) noexcept {
    return mix_seed(mix_seed(base ^ mix_seed(salt)) + stream);
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream = 0,
                    std::uint64_t salt = 0) {
    return Rng{derive_seed(base, stream, salt)};
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline double uniform01(Rng& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

}  // namespace decomp
