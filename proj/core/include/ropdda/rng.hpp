#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ropdda {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; a good bijective mixer for seed derivation.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent seed for a named component from a root seed.
/// All randomness in an experiment flows from one root through this function.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
    return mix64(root ^ mix64(fnv1a(name)));
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
    return mix64(root ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Uniform integer in [0, n). n must be positive.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

inline double uniform01(Rng &rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

} // namespace ropdda
