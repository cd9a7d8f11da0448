#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "killchain/defenses.hpp"
#include "killchain/events.hpp"
#include "killchain/logger.hpp"

namespace killchain {

struct MemoryRecord {
    enum class Origin { Seeded, AgentWrite };

    std::string key;
    std::string value;
    Origin origin = Origin::Seeded;
    std::optional<int> written_at_step;  // absent for seeded records
};

struct WriteOutcome {
    bool committed = false;
    std::vector<std::string> matched;  // keywords that blocked the write
};

inline constexpr std::string_view kMissingKeyResult = "ERROR: key not found";

// Per-run key-value memory. seed() is the setup-time path that bypasses every
// defense hook and emits no events; read/write are the agent-facing tools.
class MemoryStore {
public:
    // Setup only. Throws ConfigError once the agent session has started.
    void seed(const std::string& key, const std::string& payload);

    void mark_session_started() { session_started_ = true; }

    // Returns the stored value or the in-band missing-key error text, and
    // emits a memory_read event (canary scan included).
    std::string read_memory(const std::string& key, int step, AgentId agent,
                            PropagationLogger& logger);

    // With the write filter active, a flagged value commits nothing and emits
    // a defense_block event; otherwise the record lands with origin AgentWrite
    // and a memory_write event (value scanned, stage Persisted).
    WriteOutcome write_memory(const std::string& key, const std::string& value, int step,
                              AgentId agent, const DefenseSet& defenses,
                              const KeywordSet& keywords, PropagationLogger& logger);

    // Key-sorted copy of current contents.
    std::vector<MemoryRecord> snapshot() const;

    std::optional<std::string> lookup(const std::string& key) const;

private:
    std::map<std::string, MemoryRecord> records_;
    bool session_started_ = false;
};

}  // namespace killchain
