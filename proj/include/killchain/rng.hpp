#pragma once

#include <cstdint>
#include <random>

namespace killchain {

// splitmix64: used to derive independent sub-streams from one run seed so
// that, e.g., canary generation and policy draws never consume each other's
// numbers. mt19937_64 itself is bit-exact across conforming implementations;
// std distributions are not, so all scaling below is done by hand.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

enum class RngStream : std::uint64_t {
    Canary = 1,
    Policy = 2,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
    return std::mt19937_64(splitmix64(seed ^ (static_cast<std::uint64_t>(stream) << 32)));
}

// Uniform draw in [0, 1) from the top 53 bits of one engine output.
inline double uniform_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace killchain
