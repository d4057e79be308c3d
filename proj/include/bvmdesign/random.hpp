#pragma once

#include <cstdint>
#include <random>

namespace bvmdesign {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to turn (master seed, counters) into
/// well-separated stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Counter-based seed derivation: the same (master, a, b) always yields the
/// same sub-seed, independently of evaluation order or thread count.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                    std::uint64_t b = 0) {
    return mix64(mix64(mix64(master) ^ (a + 0x632be59bd9b4e019ULL)) ^
                 (b + 0x8cb92ba72f3d8dd7ULL));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(derive_seed(master, a, b));
}

}  // namespace bvmdesign
