#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "killchain/defenses.hpp"
#include "killchain/events.hpp"
#include "killchain/logger.hpp"
#include "killchain/scenario.hpp"

namespace killchain {

using ToolArgs = std::map<std::string, std::string>;

struct ToolSpec {
    std::string name;
    PermissionLevel min_permission = PermissionLevel::Read;
    bool outbound = false;  // argument flow leaves the sandbox
    std::vector<std::string> required_args;
    std::function<std::string(const ToolArgs&, const ScenarioInstance&)> handler;
};

struct ToolCall {
    std::string tool_name;
    ToolArgs arguments;
    AgentId issued_by = AgentId::A;
    int step = 0;
};

// Per-session permission state. Starts at Execute; raised only by a
// successful escalate_privilege and never lowered.
class SessionPermission {
public:
    PermissionLevel current() const { return current_; }

    void raise_to(PermissionLevel level) {
        if (level > current_) current_ = level;
    }

private:
    PermissionLevel current_ = PermissionLevel::Execute;
};

struct DispatchResult {
    std::string raw_result;   // what the logger scanned
    std::string presented;    // what the agent sees (spotlight wrap applied)
    bool blocked = false;     // a defense stopped the call
    bool denied = false;      // permission check failed
};

// Name-keyed dispatcher. Built-ins: get_webpage (Read), query_db (Read),
// send_report (Execute, outbound), escalate_privilege (Execute, outbound).
class ToolRegistry {
public:
    // Duplicate names are a configuration error.
    void register_tool(ToolSpec spec);

    bool has(const std::string& name) const;
    const ToolSpec* find(const std::string& name) const;
    std::size_t size() const { return tools_.size(); }
    std::vector<std::string> names() const;

    static ToolRegistry builtins();

    // Registers the Admin-gated outbound export tool used by the privilege
    // escalation scenario.
    void register_admin_export();

    // Full dispatch pipeline: tool_call event, pi_detector hook, permission
    // gate, handler, outbound argument scan, tool_result event + result scan,
    // spotlight wrap for presentation. Raises `session` on successful
    // escalate_privilege.
    DispatchResult dispatch(const ToolCall& call, SessionPermission& session,
                            const ScenarioInstance& fixtures, const DefenseSet& defenses,
                            const PiDetectorConfig& pi_config, const KeywordSet& keywords,
                            PropagationLogger& logger) const;

private:
    std::map<std::string, ToolSpec> tools_;
};

// Rendered form of a call inspected by the outgoing-query detector:
// "name key=value key=value" with keys in sorted order.
std::string render_call_text(const std::string& tool_name, const ToolArgs& args);

// tool_call events per tool name.
std::map<std::string, int> outbound_call_counts(const std::vector<StepEvent>& events);

}  // namespace killchain
