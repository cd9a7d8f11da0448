#include "killchain/tool_registry.hpp"

#include <algorithm>

#include "json.hpp"

#include "killchain/errors.hpp"

namespace killchain {

using nlohmann::json;

void ToolRegistry::register_tool(ToolSpec spec) {
    if (tools_.count(spec.name)) {
        throw ConfigError("tool already registered: " + spec.name);
    }
    tools_.emplace(spec.name, std::move(spec));
}

bool ToolRegistry::has(const std::string& name) const { return tools_.count(name) > 0; }

const ToolSpec* ToolRegistry::find(const std::string& name) const {
    const auto it = tools_.find(name);
    return it == tools_.end() ? nullptr : &it->second;
}

std::vector<std::string> ToolRegistry::names() const {
    std::vector<std::string> out;
    out.reserve(tools_.size());
    for (const auto& [name, spec] : tools_) {
        (void)spec;
        out.push_back(name);
    }
    return out;
}

ToolRegistry ToolRegistry::builtins() {
    ToolRegistry reg;
    reg.register_tool(ToolSpec{
        "get_webpage", PermissionLevel::Read, false, {"url"},
        [](const ToolArgs& args, const ScenarioInstance& inst) {
            const auto it = inst.web_fixtures.find(args.at("url"));
            return it == inst.web_fixtures.end()
                       ? "ERROR: no document at " + args.at("url")
                       : it->second;
        }});
    reg.register_tool(ToolSpec{
        "query_db", PermissionLevel::Read, false, {"sql"},
        [](const ToolArgs& args, const ScenarioInstance& inst) {
            const auto it = inst.db_fixtures.find(args.at("sql"));
            return it == inst.db_fixtures.end() ? std::string("ERROR: query returned no rows")
                                                : it->second;
        }});
    reg.register_tool(ToolSpec{
        "send_report", PermissionLevel::Execute, true, {"to", "body"},
        [](const ToolArgs& args, const ScenarioInstance&) {
            return "sent to " + args.at("to");
        }});
    reg.register_tool(ToolSpec{
        "escalate_privilege", PermissionLevel::Execute, true, {"reason"},
        [](const ToolArgs&, const ScenarioInstance&) {
            return std::string("privilege escalated");
        }});
    return reg;
}

void ToolRegistry::register_admin_export() {
    register_tool(ToolSpec{
        "admin_export", PermissionLevel::Admin, true, {"to", "data"},
        [](const ToolArgs& args, const ScenarioInstance&) {
            return "exported to " + args.at("to");
        }});
}

std::string render_call_text(const std::string& tool_name, const ToolArgs& args) {
    std::string out = tool_name;
    for (const auto& [key, value] : args) {
        out += " " + key + "=" + value;
    }
    return out;
}

namespace {

json args_json(const ToolArgs& args) {
    json j = json::object();
    for (const auto& [key, value] : args) j[key] = value;
    return j;
}

StepEvent make_event(const PropagationLogger& logger, int step, AgentId agent, EventType type,
                     const std::string& tool_name, std::string text) {
    StepEvent e;
    e.run_id = logger.run_id();
    e.step = step;
    e.agent = agent;
    e.event_type = type;
    e.tool_name = tool_name;
    e.text = std::move(text);
    return e;
}

}  // namespace

DispatchResult ToolRegistry::dispatch(const ToolCall& call, SessionPermission& session,
                                      const ScenarioInstance& fixtures,
                                      const DefenseSet& defenses,
                                      const PiDetectorConfig& pi_config,
                                      const KeywordSet& keywords,
                                      PropagationLogger& logger) const {
    (void)keywords;
    logger.emit(make_event(logger, call.step, call.issued_by, EventType::ToolCall,
                           call.tool_name, args_json(call.arguments).dump()));

    auto finish = [&](const std::string& raw, bool blocked, bool denied) {
        logger.emit(make_event(logger, call.step, call.issued_by, EventType::ToolResult,
                               call.tool_name, raw));
        logger.scan_result(call.step, call.issued_by, call.tool_name, raw);
        DispatchResult out;
        out.raw_result = raw;
        out.presented = defenses.spotlighting ? spotlight_wrap(raw) : raw;
        out.blocked = blocked;
        out.denied = denied;
        return out;
    };

    const ToolSpec* spec = find(call.tool_name);
    if (!spec) {
        return finish("ERROR: unknown tool " + call.tool_name, false, false);
    }
    for (const auto& required : spec->required_args) {
        if (!call.arguments.count(required)) {
            return finish("ERROR: missing argument " + required, false, false);
        }
    }

    if (defenses.pi_detector) {
        const DefenseVerdict verdict =
            pi_detector_classify(render_call_text(call.tool_name, call.arguments), pi_config);
        const bool fail_open =
            !verdict.block &&
            std::find(verdict.matched.begin(), verdict.matched.end(), "fail_open") !=
                verdict.matched.end();
        if (verdict.block || fail_open) {
            json text = {{"defense", "pi_detector"},
                         {"action", verdict.block ? "block" : "fail_open"},
                         {"matched", verdict.matched},
                         {"args", args_json(call.arguments)}};
            logger.emit(make_event(logger, call.step, call.issued_by, EventType::DefenseBlock,
                                   call.tool_name, text.dump()));
        }
        if (verdict.block) {
            return finish("BLOCKED: pi_detector flagged this call", true, false);
        }
    }

    if (session.current() < spec->min_permission) {
        return finish("DENIED: requires " + std::string(permission_name(spec->min_permission)),
                      false, true);
    }

    const std::string raw = spec->handler(call.arguments, fixtures);

    if (spec->outbound) {
        logger.scan_args(call.step, call.issued_by, call.tool_name, call.arguments,
                         KillChainStage::Executed);
    }
    if (call.tool_name == "escalate_privilege") {
        session.raise_to(PermissionLevel::Admin);
    }
    return finish(raw, false, false);
}

std::map<std::string, int> outbound_call_counts(const std::vector<StepEvent>& events) {
    std::map<std::string, int> counts;
    for (const auto& e : events) {
        if (e.event_type == EventType::ToolCall && e.tool_name) {
            ++counts[*e.tool_name];
        }
    }
    return counts;
}

}  // namespace killchain
