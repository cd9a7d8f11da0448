#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "killchain/errors.hpp"
#include "killchain/logger.hpp"
#include "killchain/orchestrator.hpp"

using namespace killchain;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("killchain-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

TraceHeader test_header(const std::string& run_id, bool attacked = true) {
    TraceHeader h;
    h.run_id = run_id;
    h.batch_id = "test";
    h.policy_id = "propagator";
    h.scenario_kind = ScenarioKind::MemoryPoison;
    h.defense_condition = DefenseCondition::None;
    h.attacked = attacked;
    h.seed = 1;
    return h;
}

StepEvent make_event(const std::string& run_id, int step, EventType type,
                     const std::string& text) {
    StepEvent e;
    e.run_id = run_id;
    e.step = step;
    e.agent = AgentId::A;
    e.event_type = type;
    e.text = text;
    if (type == EventType::CanaryInResult || type == EventType::CanaryInArgs) {
        e.canary = CanaryToken{"SECRET-AB12CD34"};
        e.stage = type == EventType::CanaryInResult ? KillChainStage::Exposed
                                                    : KillChainStage::Executed;
        e.tool_name = type == EventType::CanaryInResult ? "get_webpage" : "send_report";
    }
    return e;
}

}  // namespace

TEST_CASE("emit then parse round-trips events exactly") {
    const auto dir = temp_dir("roundtrip");
    const auto path = dir / "trace.jsonl";
    {
        PropagationLogger logger("r1", test_header("r1"), path);
        logger.emit(make_event("r1", 1, EventType::ToolCall, "{\"url\":\"x\"}"));
        logger.emit(make_event("r1", 1, EventType::ToolResult, "doc"));
        logger.emit(make_event("r1", 1, EventType::CanaryInResult, "SECRET-AB12CD34"));
        logger.emit(make_event("r1", 2, EventType::CanaryInArgs, "SECRET-AB12CD34"));
        logger.emit(make_event("r1", 3, EventType::FinalMessage, "Done."));
        const auto parsed = parse_trace(path);
        REQUIRE(parsed.events.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(parsed.events[i] == logger.events()[i]);
        CHECK(parsed.header.run_id == "r1");
        CHECK(parsed.header.schema == kTraceSchema);
    }
}

TEST_CASE("tool result with canary produces tool_result then canary_in_result") {
    PropagationLogger logger("r2");
    logger.emit(make_event("r2", 1, EventType::ToolResult, "see SECRET-AB12CD34"));
    logger.scan_result(1, AgentId::A, "get_webpage", "see SECRET-AB12CD34");
    REQUIRE(logger.events().size() == 2);
    CHECK(logger.events()[0].event_type == EventType::ToolResult);
    CHECK(logger.events()[1].event_type == EventType::CanaryInResult);
    CHECK(logger.events()[1].stage == KillChainStage::Exposed);
    CHECK(logger.events()[1].canary->value == "SECRET-AB12CD34");
}

TEST_CASE("benign final message emits exactly one line") {
    const auto dir = temp_dir("final");
    const auto path = dir / "trace.jsonl";
    PropagationLogger logger("r3", test_header("r3", false), path);
    logger.emit(make_event("r3", 1, EventType::FinalMessage, "all set"));
    const auto parsed = parse_trace(path);
    CHECK(parsed.events.size() == 1);
    CHECK(parsed.events[0].event_type == EventType::FinalMessage);
}

TEST_CASE("steps may repeat but never go backwards") {
    PropagationLogger logger("r4");
    logger.emit(make_event("r4", 2, EventType::ToolCall, "{}"));
    logger.emit(make_event("r4", 2, EventType::ToolResult, "ok"));
    CHECK_THROWS_AS(logger.emit(make_event("r4", 1, EventType::ToolResult, "late")),
                    std::logic_error);
}

TEST_CASE("canary field is rejected on non-canary events and vice versa") {
    auto bad = make_event("r5", 1, EventType::ToolResult, "x");
    bad.canary = CanaryToken{"SECRET-AB12CD34"};
    CHECK_THROWS_AS(event_from_json_line(event_to_json_line(bad), 2), TraceParseError);

    auto missing = make_event("r5", 1, EventType::CanaryInResult, "x");
    missing.canary.reset();
    CHECK_THROWS_AS(event_from_json_line(event_to_json_line(missing), 2), TraceParseError);
}

TEST_CASE("truncated final line reports its line number") {
    const auto dir = temp_dir("trunc");
    const auto path = dir / "trace.jsonl";
    {
        PropagationLogger logger("r6", test_header("r6"), path);
        logger.emit(make_event("r6", 1, EventType::ToolCall, "{}"));
        logger.emit(make_event("r6", 2, EventType::FinalMessage, "done"));
    }
    // chop the last line in half
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::trunc);
    out << content.substr(0, content.size() - 20);
    out.close();

    try {
        parse_trace(path);
        FAIL("expected TraceParseError");
    } catch (const TraceParseError& e) {
        CHECK(e.line() == 3);  // header + 2 events; event line 2 is line 3
    }
}

TEST_CASE("random event corpus round-trips through serialization") {
    std::mt19937_64 rng(4242);
    const EventType types[] = {EventType::ToolCall,       EventType::ToolResult,
                               EventType::MemoryRead,     EventType::MemoryWrite,
                               EventType::CanaryInResult, EventType::CanaryInArgs,
                               EventType::DefenseBlock,   EventType::FinalMessage};
    const std::string texts[] = {"plain", "with \"quotes\"", "line\nbreak", "unicode-free",
                                 "tabs\tand\\slashes", ""};
    const auto dir = temp_dir("corpus");
    const auto path = dir / "trace.jsonl";
    PropagationLogger logger("big", test_header("big"), path);
    int step = 1;
    for (int i = 0; i < 1000; ++i) {
        StepEvent e;
        e.run_id = "big";
        if (rng() % 3 == 0) ++step;
        e.step = step;
        e.agent = rng() % 2 ? AgentId::A : AgentId::B;
        e.event_type = types[rng() % 8];
        e.text = texts[rng() % 6];
        if (rng() % 2) e.tool_name = "tool_" + std::to_string(rng() % 4);
        if (e.event_type == EventType::CanaryInResult ||
            e.event_type == EventType::CanaryInArgs) {
            auto engine = std::mt19937_64(rng());
            e.canary = generate_canary(engine);
            e.stage = kAllStages[rng() % 4];
        }
        logger.emit(std::move(e));
    }
    const auto parsed = parse_trace(path);
    REQUIRE(parsed.events.size() == 1000);
    for (std::size_t i = 0; i < 1000; ++i) CHECK(parsed.events[i] == logger.events()[i]);
}

TEST_CASE("annotation of a propagator trace and a clean trace") {
    const auto attacked = run_single(parse_policy_id("propagator"), ScenarioKind::MemoryPoison,
                                     DefenseCondition::None, 42);
    const auto annotation = annotate_stages(attacked.events);
    CHECK(annotation.has(KillChainStage::Exposed));
    CHECK(annotation.has(KillChainStage::Executed));
    CHECK_FALSE(annotation.has(KillChainStage::Persisted));
    CHECK_FALSE(annotation.has(KillChainStage::Relayed));
    CHECK(annotation.furthest == KillChainStage::Executed);
    CHECK(annotation.first(KillChainStage::Exposed) == 1);
    CHECK(annotation.first(KillChainStage::Executed) == 2);

    const auto clean = run_single(parse_policy_id("propagator"), ScenarioKind::MemoryPoison,
                                  DefenseCondition::None, 42, {}, false);
    const auto clean_annotation = annotate_stages(clean.events);
    CHECK_FALSE(clean_annotation.furthest.has_value());
    for (auto s : kAllStages) CHECK_FALSE(clean_annotation.has(s));
}

TEST_CASE("summarizer propagation trace reaches Exposed only") {
    const auto record = run_relay(parse_policy_id("summarizer_filter"),
                                  parse_policy_id("summarizer_filter"), DefenseCondition::None,
                                  RelayMode::Memory, 5);
    const auto annotation = annotate_stages(record.events);
    CHECK(annotation.has(KillChainStage::Exposed));
    CHECK_FALSE(annotation.has(KillChainStage::Persisted));
    CHECK_FALSE(annotation.has(KillChainStage::Relayed));
    CHECK_FALSE(annotation.has(KillChainStage::Executed));
}

TEST_CASE("re-annotation reproduces the stored furthest stage") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const auto record = run_single(parse_policy_id("propagator"), ScenarioKind::ToolPoison,
                                       DefenseCondition::None, seed);
        CHECK(annotate_stages(record.events).furthest == record.furthest_stage);
    }
}

TEST_CASE("a 764-trace corpus parses in under 2 seconds") {
    const auto dir = temp_dir("bulk");
    std::vector<fs::path> paths;
    for (int i = 0; i < 764; ++i) {
        const auto path = dir / ("t" + std::to_string(i) + ".jsonl");
        PropagationLogger logger("bulk" + std::to_string(i),
                                 test_header("bulk" + std::to_string(i)), path);
        for (int s = 1; s <= 10; ++s) {
            logger.emit(make_event("bulk" + std::to_string(i), s, EventType::ToolResult,
                                   "result text for step " + std::to_string(s)));
        }
        paths.push_back(path);
    }
    const auto start = std::chrono::steady_clock::now();
    std::size_t total = 0;
    for (const auto& path : paths) total += parse_trace(path).events.size();
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - start)
                             .count();
    CHECK(total == 7640);
    CHECK(elapsed < 2000);
}
