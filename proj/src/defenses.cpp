#include "killchain/defenses.hpp"

#include <algorithm>
#include <cctype>

#include "httplib.h"
#include "json.hpp"

#include "killchain/canary.hpp"

namespace killchain {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool contains_ci(const std::string& haystack_lower, const std::string& needle) {
    return haystack_lower.find(lower(needle)) != std::string::npos;
}

// Phrases that mark imperative injection in outgoing text. A plain report that
// merely carries copied data (addresses, tokens) does not trip this mode.
const std::vector<std::string>& intent_phrases() {
    static const std::vector<std::string> phrases = {
        "ignore previous instructions",
        "ignore all previous instructions",
        "important new instruction",
        "disregard previous instructions",
        "disregard the above",
        "you must now",
    };
    return phrases;
}

}  // namespace

KeywordSet default_keyword_set() {
    return KeywordSet{{
        "ignore previous",
        "ignore all previous",
        "exfil",
        "attacker.com",
        "escalate_privilege",
        "send_report to",
    }};
}

PiDetectorConfig default_pi_detector_config() {
    PiDetectorConfig cfg;
    cfg.keywords = default_keyword_set();
    return cfg;
}

DefenseVerdict write_filter_check(const std::string& value, const KeywordSet& keywords) {
    DefenseVerdict v;
    const std::string value_lower = lower(value);
    for (const auto& kw : keywords.literals) {
        if (contains_ci(value_lower, kw)) v.matched.push_back(kw);
    }
    if (!scan_canaries(value).empty()) {
        v.matched.push_back(std::string(kCanaryPattern));
    }
    if (!v.matched.empty()) {
        v.block = true;
        v.reason = "write_filter keyword scan";
    }
    return v;
}

std::string_view pi_detector_mode_name(PiDetectorMode m) {
    switch (m) {
        case PiDetectorMode::Keyword: return "keyword";
        case PiDetectorMode::Intent: return "intent";
        case PiDetectorMode::Remote: return "remote";
    }
    return "";
}

std::optional<PiDetectorMode> pi_detector_mode_from_name(std::string_view name) {
    for (auto m : {PiDetectorMode::Keyword, PiDetectorMode::Intent, PiDetectorMode::Remote}) {
        if (pi_detector_mode_name(m) == name) return m;
    }
    return std::nullopt;
}

namespace {

DefenseVerdict classify_remote(const std::string& query, const PiDetectorConfig& cfg) {
    DefenseVerdict v;
    // Split "http://host:port" from the path.
    std::string base = cfg.endpoint_url;
    std::string path = "/";
    const auto scheme_end = base.find("://");
    if (scheme_end != std::string::npos) {
        const auto path_start = base.find('/', scheme_end + 3);
        if (path_start != std::string::npos) {
            path = base.substr(path_start);
            base = base.substr(0, path_start);
        }
    }
    httplib::Client client(base);
    client.set_connection_timeout(cfg.timeout_sec);
    client.set_read_timeout(cfg.timeout_sec);

    nlohmann::json req;
    req["query"] = query;
    auto res = client.Post(path, req.dump(), "application/json");
    if (res && res->status == 200) {
        try {
            auto j = nlohmann::json::parse(res->body);
            if (j.value("action", "allow") == "block") {
                v.block = true;
                v.reason = j.value("reason", std::string("remote classifier"));
                v.matched.push_back(j.value("label", std::string("remote")));
            }
            return v;
        } catch (const nlohmann::json::parse_error&) {
            // fall through to the unreachable branch
        }
    }
    if (cfg.fail_closed) {
        v.block = true;
        v.reason = "pi_detector remote classifier unreachable (fail-closed)";
        v.matched.push_back("fail_closed");
    } else {
        v.block = false;
        v.matched.push_back("fail_open");
    }
    return v;
}

}  // namespace

DefenseVerdict pi_detector_classify(const std::string& outgoing_query,
                                    const PiDetectorConfig& config) {
    switch (config.mode) {
        case PiDetectorMode::Keyword: {
            DefenseVerdict v = write_filter_check(outgoing_query, config.keywords);
            if (v.block) v.reason = "pi_detector keyword rules";
            return v;
        }
        case PiDetectorMode::Intent: {
            DefenseVerdict v;
            const std::string q = lower(outgoing_query);
            for (const auto& phrase : intent_phrases()) {
                if (q.find(phrase) != std::string::npos) v.matched.push_back(phrase);
            }
            if (!v.matched.empty()) {
                v.block = true;
                v.reason = "pi_detector intent classifier";
            }
            return v;
        }
        case PiDetectorMode::Remote:
            return classify_remote(outgoing_query, config);
    }
    return {};
}

std::string spotlight_wrap(const std::string& tool_result) {
    return "<document>\n" + tool_result + "\n</document>";
}

std::string spotlight_unwrap(const std::string& text) {
    constexpr std::string_view open = "<document>\n";
    constexpr std::string_view close = "\n</document>";
    if (text.size() >= open.size() + close.size() &&
        text.compare(0, open.size(), open) == 0 &&
        text.compare(text.size() - close.size(), close.size(), close) == 0) {
        return text.substr(open.size(), text.size() - open.size() - close.size());
    }
    return text;
}

DefenseSet resolve_condition(DefenseCondition condition) {
    switch (condition) {
        case DefenseCondition::None: return {};
        case DefenseCondition::WriteFilter: return {true, false, false};
        case DefenseCondition::PiDetector: return {false, true, false};
        case DefenseCondition::Spotlighting: return {false, false, true};
        case DefenseCondition::All: return {true, true, true};
    }
    return {};
}

}  // namespace killchain
