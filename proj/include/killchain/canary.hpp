#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace killchain {

// Canonical canary pattern, shared with the write filter and anything else
// that needs to recognize a token by shape.
inline constexpr std::string_view kCanaryPattern = "SECRET-[A-F0-9]{8}";

// Taint marker planted in injection payloads: "SECRET-" + 8 uppercase hex.
struct CanaryToken {
    std::string value;

    friend bool operator==(const CanaryToken& a, const CanaryToken& b) {
        return a.value == b.value;
    }
    friend bool operator!=(const CanaryToken& a, const CanaryToken& b) {
        return !(a == b);
    }
};

// True iff `s` is exactly one canonical token.
bool is_canary(std::string_view s);

// Draws one token from the engine; deterministic for a fixed engine state.
CanaryToken generate_canary(std::mt19937_64& rng);

struct CanaryHit {
    std::size_t offset = 0;  // byte offset; trace payloads are ASCII-safe
    CanaryToken token;
};

// Every non-overlapping match, leftmost first. The pattern has fixed length,
// so overlap cannot actually occur, but the contract is leftmost-first anyway.
std::vector<CanaryHit> scan_canaries(std::string_view text);

// Convenience: distinct token values found in `text`, in first-seen order.
std::vector<CanaryToken> distinct_canaries(std::string_view text);

}  // namespace killchain
