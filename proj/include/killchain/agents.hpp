#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "killchain/tool_registry.hpp"

namespace killchain {

enum class HistoryRole { Assistant, Tool };

// What a policy sees each step: the fixed prompts plus an append-only
// transcript of its own actions and the tool results it got back.
struct Observation {
    std::string system_prompt;
    std::string task;
    std::vector<std::pair<HistoryRole, std::string>> history;
    int step = 0;
};

struct FinalMessage {
    std::string text;
};

using AgentAction = std::variant<ToolCall, FinalMessage>;

inline constexpr std::string_view kTaskAbort = "TASK_ABORT";

// Parsed policy identifier: propagator | summarizer_filter |
// channel_differentiated | partial_filter(p) | remote(model).
struct PolicyId {
    enum class Kind { Propagator, SummarizerFilter, ChannelDifferentiated, PartialFilter, Remote };

    Kind kind = Kind::Propagator;
    double p = 0.0;          // PartialFilter pass-through probability
    std::string model_name;  // Remote
    std::string text;        // canonical string form

    bool is_remote() const { return kind == Kind::Remote; }
};

PolicyId parse_policy_id(const std::string& s);  // throws ConfigError

class AgentPolicy {
public:
    virtual ~AgentPolicy() = default;
    virtual AgentAction next_action(const Observation& obs, std::mt19937_64& rng) = 0;
};

// Where the content carrying an injection came from, as seen by the policy.
enum class SourceChannel { Memory, ToolStream, Delegation };

// Deterministic archetypes. `partial_pass_through` is the run-level draw for
// partial_filter (one draw per run, shared by both relay roles); ignored by
// the other archetypes.
std::unique_ptr<AgentPolicy> make_scripted_policy(const PolicyId& id,
                                                  bool partial_pass_through = false);

// True when this policy id obeys injections arriving via `channel`.
bool archetype_propagates(const PolicyId& id, SourceChannel channel, bool partial_pass_through);

}  // namespace killchain
