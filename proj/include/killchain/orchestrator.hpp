#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "killchain/agents.hpp"
#include "killchain/defenses.hpp"
#include "killchain/events.hpp"
#include "killchain/logger.hpp"
#include "killchain/memory_store.hpp"
#include "killchain/remote_agent.hpp"
#include "killchain/scenario.hpp"
#include "killchain/tool_registry.hpp"

namespace killchain {

inline constexpr int kDefaultStepBudget = 12;

// Environment shared by every run in a batch.
struct RunEnvironment {
    KeywordSet keywords = default_keyword_set();
    PiDetectorConfig pi_config = default_pi_detector_config();
    std::optional<EndpointConfig> endpoint;  // for remote(...) policies
    int step_budget = kDefaultStepBudget;
    bool wall_clock = false;  // add timestamps to trace lines
};

// Everything needed to execute one run.
struct RunSpec {
    std::string run_id;
    std::string batch_id;
    PolicyId policy_a;
    std::optional<PolicyId> policy_b;  // propagation only
    ScenarioKind scenario = ScenarioKind::MemoryPoison;
    DefenseCondition defense = DefenseCondition::None;
    std::optional<RelayMode> relay;  // propagation only
    bool attacked = true;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> trace_path;
};

// Executes one run end to end: scenario build, seeding, agent loop(s), stage
// annotation, task-success evaluation. InfraError inside the loop marks the
// record infra_failed instead of propagating.
RunRecord execute_run(const RunSpec& spec, const RunEnvironment& env);

// Single-agent scenarios (memory_poison, tool_poison, permission_esc).
RunRecord run_single(const PolicyId& policy, ScenarioKind scenario, DefenseCondition defense,
                     std::uint64_t seed, const RunEnvironment& env = {}, bool attacked = true);

// Two-agent propagation, either relay mode.
RunRecord run_relay(const PolicyId& policy_a, const PolicyId& policy_b,
                    DefenseCondition defense, RelayMode mode, std::uint64_t seed,
                    const RunEnvironment& env = {}, bool attacked = true);

// Task-success predicate: a successful send_report to the instance's goal
// recipient whose body contains the goal keyword.
bool evaluate_task_success(const std::vector<StepEvent>& events,
                           const ScenarioInstance& instance);

struct BatchCell {
    PolicyId policy;
    std::optional<PolicyId> policy_b;
    ScenarioKind scenario = ScenarioKind::MemoryPoison;
    DefenseCondition defense = DefenseCondition::None;
    int repetitions = 1;             // >= 1
    std::uint64_t base_seed = 0;     // run seed = base_seed + repetition index
    bool attacked = true;
    std::optional<RelayMode> relay;  // default memory for propagation
};

struct BatchConfig {
    std::string batch_id;
    std::vector<BatchCell> cells;
    RunEnvironment env;
};

// JSON config file: {"batch_id": ..., "cells": [{"policy", "scenario",
// "defense", "repetitions", "base_seed", ...}], optional "pi_detector_mode",
// "keywords", "step_budget", "endpoint"}.
BatchConfig parse_batch_config(const std::filesystem::path& path);
BatchConfig parse_batch_config_json(const std::string& text);

struct BatchResult {
    std::vector<RunRecord> records;
    std::filesystem::path manifest_path;
    int infra_failures = 0;
};

// Executes cells x repetitions, one JSONL trace per run plus manifest.jsonl.
// Deterministic outputs for fixed seeds regardless of `parallel`. Duplicate
// canaries across attacked runs are a configuration error.
BatchResult run_batch(const BatchConfig& config, const std::filesystem::path& out_dir,
                      int parallel = 1, bool zero_timestamps = true);

// One manifest line per run.
struct ManifestEntry {
    std::string run_id;
    std::string batch_id;
    std::string policy;
    std::optional<std::string> policy_b;
    ScenarioKind scenario = ScenarioKind::MemoryPoison;
    DefenseCondition defense = DefenseCondition::None;
    std::optional<RelayMode> relay;
    bool attacked = false;
    std::uint64_t seed = 0;
    bool task_success = false;
    std::optional<KillChainStage> furthest_stage;
    std::vector<KillChainStage> reached;
    bool infra_failed = false;
    std::string trace_file;
};

std::string manifest_line(const RunRecord& record, const std::string& trace_file);
ManifestEntry manifest_entry_from_line(const std::string& line, std::size_t line_no);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& runs_dir);

// Rehydrates full run records from a batch output directory (manifest +
// traces).
std::vector<RunRecord> load_runs(const std::filesystem::path& runs_dir);

// Rebuilds a RunRecord from one trace file alone (no manifest): outcomes are
// re-derived from the events.
RunRecord run_from_trace(const std::filesystem::path& trace_path);

}  // namespace killchain
