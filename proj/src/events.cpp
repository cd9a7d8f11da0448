#include "killchain/events.hpp"

namespace killchain {

std::string_view agent_name(AgentId a) {
    return a == AgentId::A ? "A" : "B";
}

std::optional<AgentId> agent_from_name(std::string_view name) {
    if (name == "A") return AgentId::A;
    if (name == "B") return AgentId::B;
    return std::nullopt;
}

std::string_view event_type_name(EventType t) {
    switch (t) {
        case EventType::ToolCall: return "tool_call";
        case EventType::ToolResult: return "tool_result";
        case EventType::MemoryRead: return "memory_read";
        case EventType::MemoryWrite: return "memory_write";
        case EventType::CanaryInResult: return "canary_in_result";
        case EventType::CanaryInArgs: return "canary_in_args";
        case EventType::DefenseBlock: return "defense_block";
        case EventType::FinalMessage: return "final_message";
    }
    return "";
}

std::optional<EventType> event_type_from_name(std::string_view name) {
    for (auto t : {EventType::ToolCall, EventType::ToolResult, EventType::MemoryRead,
                   EventType::MemoryWrite, EventType::CanaryInResult, EventType::CanaryInArgs,
                   EventType::DefenseBlock, EventType::FinalMessage}) {
        if (event_type_name(t) == name) return t;
    }
    return std::nullopt;
}

bool operator==(const StepEvent& a, const StepEvent& b) {
    auto canary_eq = [](const std::optional<CanaryToken>& x, const std::optional<CanaryToken>& y) {
        if (x.has_value() != y.has_value()) return false;
        return !x.has_value() || x->value == y->value;
    };
    return a.run_id == b.run_id && a.step == b.step && a.agent == b.agent &&
           a.event_type == b.event_type && a.tool_name == b.tool_name &&
           canary_eq(a.canary, b.canary) && a.stage == b.stage && a.text == b.text;
}

std::string_view relay_mode_name(RelayMode m) {
    return m == RelayMode::Memory ? "memory" : "delegation";
}

std::optional<RelayMode> relay_mode_from_name(std::string_view name) {
    if (name == "memory") return RelayMode::Memory;
    if (name == "delegation") return RelayMode::Delegation;
    return std::nullopt;
}

}  // namespace killchain
