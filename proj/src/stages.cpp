#include "killchain/stages.hpp"

namespace killchain {

std::string_view stage_name(KillChainStage s) {
    switch (s) {
        case KillChainStage::Exposed: return "exposed";
        case KillChainStage::Persisted: return "persisted";
        case KillChainStage::Relayed: return "relayed";
        case KillChainStage::Executed: return "executed";
    }
    return "";
}

std::optional<KillChainStage> stage_from_name(std::string_view name) {
    for (auto s : kAllStages) {
        if (stage_name(s) == name) return s;
    }
    return std::nullopt;
}

std::string_view permission_name(PermissionLevel p) {
    switch (p) {
        case PermissionLevel::Read: return "read";
        case PermissionLevel::Write: return "write";
        case PermissionLevel::Execute: return "execute";
        case PermissionLevel::Admin: return "admin";
    }
    return "";
}

std::optional<PermissionLevel> permission_from_name(std::string_view name) {
    for (auto p : {PermissionLevel::Read, PermissionLevel::Write,
                   PermissionLevel::Execute, PermissionLevel::Admin}) {
        if (permission_name(p) == name) return p;
    }
    return std::nullopt;
}

std::string_view scenario_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::MemoryPoison: return "memory_poison";
        case ScenarioKind::ToolPoison: return "tool_poison";
        case ScenarioKind::Propagation: return "propagation";
        case ScenarioKind::PermissionEsc: return "permission_esc";
    }
    return "";
}

std::optional<ScenarioKind> scenario_from_name(std::string_view name) {
    for (auto k : kAllScenarios) {
        if (scenario_name(k) == name) return k;
    }
    return std::nullopt;
}

std::string_view defense_name(DefenseCondition c) {
    switch (c) {
        case DefenseCondition::None: return "none";
        case DefenseCondition::WriteFilter: return "write_filter";
        case DefenseCondition::PiDetector: return "pi_detector";
        case DefenseCondition::Spotlighting: return "spotlighting";
        case DefenseCondition::All: return "all";
    }
    return "";
}

std::optional<DefenseCondition> defense_from_name(std::string_view name) {
    for (auto c : kAllConditions) {
        if (defense_name(c) == name) return c;
    }
    return std::nullopt;
}

}  // namespace killchain
