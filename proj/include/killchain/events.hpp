#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "killchain/canary.hpp"
#include "killchain/stages.hpp"

namespace killchain {

enum class AgentId { A, B };

std::string_view agent_name(AgentId a);
std::optional<AgentId> agent_from_name(std::string_view name);

enum class EventType {
    ToolCall,
    ToolResult,
    MemoryRead,
    MemoryWrite,
    CanaryInResult,
    CanaryInArgs,
    DefenseBlock,
    FinalMessage,
};

std::string_view event_type_name(EventType t);
std::optional<EventType> event_type_from_name(std::string_view name);

// One JSONL trace record. `canary` is present exactly for the two canary
// event types. `text` is the payload: raw result text for results, a compact
// JSON object of the arguments for calls and memory ops.
struct StepEvent {
    std::string run_id;
    int step = 0;
    AgentId agent = AgentId::A;
    EventType event_type = EventType::ToolCall;
    std::optional<std::string> tool_name;
    std::optional<CanaryToken> canary;
    std::optional<KillChainStage> stage;
    std::string text;

    friend bool operator==(const StepEvent& a, const StepEvent& b);
};

enum class RelayMode { Memory, Delegation };

std::string_view relay_mode_name(RelayMode m);
std::optional<RelayMode> relay_mode_from_name(std::string_view name);

// One complete run. `furthest_stage` is derived from the events and absent
// for clean runs; `infra_failed` runs are excluded from metrics.
struct RunRecord {
    std::string run_id;
    std::string batch_id;
    std::string policy_id;
    std::optional<std::string> policy_b;  // relay runs only
    ScenarioKind scenario_kind = ScenarioKind::MemoryPoison;
    DefenseCondition defense_condition = DefenseCondition::None;
    std::optional<RelayMode> relay_mode;  // propagation runs only
    bool attacked = false;
    std::uint64_t seed = 0;
    std::vector<StepEvent> events;
    std::optional<KillChainStage> furthest_stage;
    bool task_success = false;
    bool infra_failed = false;
};

}  // namespace killchain
