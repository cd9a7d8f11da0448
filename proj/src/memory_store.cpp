#include "killchain/memory_store.hpp"

#include "json.hpp"

#include "killchain/errors.hpp"

namespace killchain {

using nlohmann::json;

void MemoryStore::seed(const std::string& key, const std::string& payload) {
    if (session_started_) {
        throw ConfigError("seed() called after the agent session started (key: " + key + ")");
    }
    records_[key] = MemoryRecord{key, payload, MemoryRecord::Origin::Seeded, std::nullopt};
}

std::string MemoryStore::read_memory(const std::string& key, int step, AgentId agent,
                                     PropagationLogger& logger) {
    const auto it = records_.find(key);
    const std::string result =
        it == records_.end() ? std::string(kMissingKeyResult) : it->second.value;

    StepEvent e;
    e.run_id = logger.run_id();
    e.step = step;
    e.agent = agent;
    e.event_type = EventType::MemoryRead;
    e.tool_name = "read_memory";
    e.text = json{{"key", key}, {"value", result}}.dump();
    logger.emit(std::move(e));
    logger.scan_result(step, agent, "read_memory", result);
    return result;
}

WriteOutcome MemoryStore::write_memory(const std::string& key, const std::string& value,
                                       int step, AgentId agent, const DefenseSet& defenses,
                                       const KeywordSet& keywords, PropagationLogger& logger) {
    if (defenses.write_filter) {
        const DefenseVerdict verdict = write_filter_check(value, keywords);
        if (verdict.block) {
            StepEvent e;
            e.run_id = logger.run_id();
            e.step = step;
            e.agent = agent;
            e.event_type = EventType::DefenseBlock;
            e.tool_name = "write_memory";
            e.text = json{{"defense", "write_filter"},
                          {"matched", verdict.matched},
                          {"args", {{"key", key}, {"value", value}}}}
                         .dump();
            logger.emit(std::move(e));
            return WriteOutcome{false, verdict.matched};
        }
    }

    records_[key] = MemoryRecord{key, value, MemoryRecord::Origin::AgentWrite, step};

    StepEvent e;
    e.run_id = logger.run_id();
    e.step = step;
    e.agent = agent;
    e.event_type = EventType::MemoryWrite;
    e.tool_name = "write_memory";
    e.text = json{{"key", key}, {"value", value}}.dump();
    logger.emit(std::move(e));
    logger.scan_args(step, agent, "write_memory", {{"value", value}},
                     KillChainStage::Persisted);
    return WriteOutcome{true, {}};
}

std::vector<MemoryRecord> MemoryStore::snapshot() const {
    std::vector<MemoryRecord> out;
    out.reserve(records_.size());
    for (const auto& [key, record] : records_) {
        (void)key;
        out.push_back(record);
    }
    return out;  // std::map iterates key-sorted
}

std::optional<std::string> MemoryStore::lookup(const std::string& key) const {
    const auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return it->second.value;
}

}  // namespace killchain
