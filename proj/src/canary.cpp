#include "killchain/canary.hpp"

namespace killchain {

namespace {

constexpr std::string_view kPrefix = "SECRET-";
constexpr std::size_t kHexLen = 8;
constexpr std::size_t kTokenLen = 15;  // len("SECRET-") + 8

bool is_upper_hex(char c) {
    return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'F');
}

}  // namespace

bool is_canary(std::string_view s) {
    if (s.size() != kTokenLen || s.substr(0, kPrefix.size()) != kPrefix) return false;
    for (std::size_t i = kPrefix.size(); i < kTokenLen; ++i) {
        if (!is_upper_hex(s[i])) return false;
    }
    return true;
}

CanaryToken generate_canary(std::mt19937_64& rng) {
    static constexpr char kDigits[] = "0123456789ABCDEF";
    const std::uint64_t draw = rng();
    std::string value(kPrefix);
    for (int i = 0; i < 8; ++i) {
        value.push_back(kDigits[(draw >> (28 - 4 * i)) & 0xF]);
    }
    return CanaryToken{value};
}

std::vector<CanaryHit> scan_canaries(std::string_view text) {
    std::vector<CanaryHit> hits;
    std::size_t pos = 0;
    while (pos + kTokenLen <= text.size()) {
        const std::size_t at = text.find(kPrefix, pos);
        if (at == std::string_view::npos || at + kTokenLen > text.size()) break;
        if (is_canary(text.substr(at, kTokenLen))) {
            hits.push_back(CanaryHit{at, CanaryToken{std::string(text.substr(at, kTokenLen))}});
            pos = at + kTokenLen;  // non-overlapping
        } else {
            pos = at + 1;
        }
    }
    return hits;
}

std::vector<CanaryToken> distinct_canaries(std::string_view text) {
    std::vector<CanaryToken> out;
    for (const auto& hit : scan_canaries(text)) {
        bool seen = false;
        for (const auto& t : out) {
            if (t == hit.token) { seen = true; break; }
        }
        if (!seen) out.push_back(hit.token);
    }
    return out;
}

}  // namespace killchain
