#include "killchain/remote_agent.hpp"

#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

#include "killchain/errors.hpp"

namespace killchain {

using nlohmann::json;

namespace {

json tool_schema(const std::string& name, const std::string& description,
                 const std::vector<std::string>& args) {
    json properties = json::object();
    for (const auto& a : args) properties[a] = {{"type", "string"}};
    return {{"type", "function"},
            {"function",
             {{"name", name},
              {"description", description},
              {"parameters",
               {{"type", "object"}, {"properties", properties}, {"required", args}}}}}};
}

json builtin_tool_schemas() {
    return json::array({
        tool_schema("get_webpage", "Fetch a document by URL.", {"url"}),
        tool_schema("query_db", "Run a read-only SQL query.", {"sql"}),
        tool_schema("send_report", "Email a report body to a recipient.", {"to", "body"}),
        tool_schema("escalate_privilege", "Request admin permissions.", {"reason"}),
        tool_schema("read_memory", "Read a shared memory record.", {"key"}),
        tool_schema("write_memory", "Write a shared memory record.", {"key", "value"}),
    });
}

json build_request(const EndpointConfig& config, const Observation& obs) {
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", obs.system_prompt}});
    messages.push_back({{"role", "user"}, {"content", obs.task}});
    for (const auto& [role, text] : obs.history) {
        messages.push_back(
            {{"role", role == HistoryRole::Assistant ? "assistant" : "tool"}, {"content", text}});
    }
    return {{"model", config.model},
            {"temperature", 0.0},
            {"max_tokens", 2048},
            {"messages", messages},
            {"tools", builtin_tool_schemas()}};
}

AgentAction parse_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& err) {
        throw InfraError(std::string("unparseable chat response: ") + err.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
        throw InfraError("chat response has no choices");
    }
    const json& message = j["choices"][0].value("message", json::object());
    if (message.contains("tool_calls") && message["tool_calls"].is_array() &&
        !message["tool_calls"].empty()) {
        const json& fn = message["tool_calls"][0].value("function", json::object());
        ToolCall call;
        call.tool_name = fn.value("name", std::string{});
        const std::string arguments = fn.value("arguments", std::string("{}"));
        try {
            const json args = json::parse(arguments);
            for (const auto& [key, value] : args.items()) {
                call.arguments[key] = value.is_string() ? value.get<std::string>() : value.dump();
            }
        } catch (const json::parse_error& err) {
            throw InfraError(std::string("unparseable tool arguments: ") + err.what());
        }
        return call;
    }
    if (message.contains("content") && message["content"].is_string()) {
        return FinalMessage{message["content"].get<std::string>()};
    }
    throw InfraError("chat response carries neither tool_calls nor content");
}

}  // namespace

std::string builtin_tool_schemas_json() { return builtin_tool_schemas().dump(2); }

AgentAction remote_chat_step(const EndpointConfig& config, const Observation& obs) {
    httplib::Client client(config.base_url);
    client.set_connection_timeout(config.timeout_sec);
    client.set_read_timeout(config.timeout_sec);

    httplib::Headers headers;
    if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    const std::string body = build_request(config, obs).dump();
    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
        auto res = client.Post(config.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error: HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw InfraError("chat endpoint rejected request: HTTP " +
                             std::to_string(res->status));
        }
        return parse_response(res->body);
    }
    throw InfraError("chat endpoint unreachable after " +
                     std::to_string(config.max_retries + 1) + " attempts (" + last_error + ")");
}

}  // namespace killchain
