#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tsarag {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Fans a single experiment seed out to an independent stream per label
/// ("pool", "mask", "kmeans", ...). Turning one feature off never shifts the
/// random draws seen by another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

inline Rng make_rng(std::uint64_t seed, std::string_view label) { return Rng(derive_seed(seed, label)); }

}  // namespace tsarag
