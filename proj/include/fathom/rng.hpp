#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fathom {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Child seed for stream `tag` of `parent`. Seeds form a tree:
/// master -> round -> client, so any node can be regenerated on its own.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
    return mix64(parent ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t tag_of(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

} // namespace fathom
