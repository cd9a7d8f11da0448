#pragma once

#include <string>

#include "killchain/agents.hpp"

namespace killchain {

// Remote chat endpoint speaking a chat-completions-style JSON dialect.
// The credential is read from the named environment variable at request time
// and sent as a bearer token when present.
struct EndpointConfig {
    std::string base_url;      // e.g. http://localhost:8089
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env = "KILLCHAIN_API_KEY";
    int timeout_sec = 30;
    int max_retries = 2;  // retries after the first attempt
};

// One request/response exchange: conversation in, ToolCall or FinalMessage
// out. Sends temperature 0.0 and max_tokens 2048, declares the built-in tool
// schemas, retries transport failures and 5xx up to max_retries, then throws
// InfraError (the run is then marked infra_failed).
AgentAction remote_chat_step(const EndpointConfig& config, const Observation& obs);

class RemotePolicy : public AgentPolicy {
public:
    explicit RemotePolicy(EndpointConfig config) : config_(std::move(config)) {}

    AgentAction next_action(const Observation& obs, std::mt19937_64&) override {
        return remote_chat_step(config_, obs);
    }

private:
    EndpointConfig config_;
};

// The tool schema block sent with every request; exposed for tests and docs.
std::string builtin_tool_schemas_json();

}  // namespace killchain
