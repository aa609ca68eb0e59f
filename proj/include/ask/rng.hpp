#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ask {

/// Derives an independent seed for a named random stream from the root seed,
/// so toggling one mechanism never shifts another mechanism's draws.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    // splitmix64 finalizer
    std::uint64_t z = root ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view stream) { return Rng(derive_seed(root, stream)); }

}  // namespace ask
