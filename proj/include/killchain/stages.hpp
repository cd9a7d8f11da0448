#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace killchain {

// Ordered stages an injected token traverses. Comparison follows the chain:
// Exposed < Persisted < Relayed < Executed.
enum class KillChainStage { Exposed = 0, Persisted = 1, Relayed = 2, Executed = 3 };

inline constexpr std::array<KillChainStage, 4> kAllStages = {
    KillChainStage::Exposed, KillChainStage::Persisted,
    KillChainStage::Relayed, KillChainStage::Executed};

// Tool permission ladder: Read < Write < Execute < Admin.
enum class PermissionLevel { Read = 0, Write = 1, Execute = 2, Admin = 3 };

// Attack surface of a scenario.
enum class ScenarioKind { MemoryPoison = 0, ToolPoison = 1, Propagation = 2, PermissionEsc = 3 };

inline constexpr std::array<ScenarioKind, 4> kAllScenarios = {
    ScenarioKind::MemoryPoison, ScenarioKind::ToolPoison,
    ScenarioKind::Propagation, ScenarioKind::PermissionEsc};

// Defense condition for a run. All == write_filter + pi_detector + spotlighting.
enum class DefenseCondition { None = 0, WriteFilter = 1, PiDetector = 2, Spotlighting = 3, All = 4 };

inline constexpr std::array<DefenseCondition, 5> kAllConditions = {
    DefenseCondition::None, DefenseCondition::WriteFilter, DefenseCondition::PiDetector,
    DefenseCondition::Spotlighting, DefenseCondition::All};

std::string_view stage_name(KillChainStage s);
std::optional<KillChainStage> stage_from_name(std::string_view name);

std::string_view permission_name(PermissionLevel p);
std::optional<PermissionLevel> permission_from_name(std::string_view name);

std::string_view scenario_name(ScenarioKind k);
std::optional<ScenarioKind> scenario_from_name(std::string_view name);

std::string_view defense_name(DefenseCondition c);
std::optional<DefenseCondition> defense_from_name(std::string_view name);

}  // namespace killchain
