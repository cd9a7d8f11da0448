// Command-line front end: run batches, build reports, run forensic analyses,
// validate trace files. Exit codes: 0 success, 1 runtime/validation failure,
// 2 configuration or usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "killchain/errors.hpp"
#include "killchain/forensics.hpp"
#include "killchain/logger.hpp"
#include "killchain/metrics.hpp"
#include "killchain/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace killchain;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir, int parallel,
            bool zero_timestamps) {
    const BatchConfig config = parse_batch_config(config_path);
    const BatchResult result = run_batch(config, out_dir, parallel, zero_timestamps);

    std::printf("%-28s %-24s %-15s %-13s %-8s %-5s %-10s %s\n", "run_id", "policy", "scenario",
                "defense", "attacked", "task", "furthest", "infra");
    for (const auto& r : result.records) {
        std::printf("%-28s %-24s %-15s %-13s %-8s %-5s %-10s %s\n", r.run_id.c_str(),
                    r.policy_id.c_str(), std::string(scenario_name(r.scenario_kind)).c_str(),
                    std::string(defense_name(r.defense_condition)).c_str(),
                    r.attacked ? "yes" : "no", r.task_success ? "ok" : "-",
                    r.furthest_stage ? std::string(stage_name(*r.furthest_stage)).c_str() : "-",
                    r.infra_failed ? "FAILED" : "-");
    }
    std::printf("%zu runs, %d infra-failed, manifest: %s\n", result.records.size(),
                result.infra_failures, result.manifest_path.string().c_str());
    return result.infra_failures > 0 ? 1 : 0;
}

int cmd_report(const std::string& runs_dir, const std::string& format) {
    const std::vector<RunRecord> records = load_runs(runs_dir);
    if (format == "csv") {
        const std::string csv = cells_to_csv(aggregate_cells(records));
        const fs::path out_path = fs::path(runs_dir) / "report.csv";
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + out_path.string());
        out << csv;
        std::cout << csv;
        std::cerr << "wrote " << out_path.string() << "\n";
    } else {
        const std::string md = report_markdown(records);
        const fs::path out_path = fs::path(runs_dir) / "report.md";
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + out_path.string());
        out << md;
        std::cout << md;
        std::cerr << "wrote " << out_path.string() << "\n";
    }
    return 0;
}

std::vector<RunRecord> load_forensics_input(const std::string& input) {
    if (fs::is_directory(input)) return load_runs(input);
    return {run_from_trace(input)};
}

int cmd_forensics(const std::string& input, const std::string& analysis,
                  const std::string& out_path) {
    const std::vector<RunRecord> records = load_forensics_input(input);

    if (analysis == "features") {
        export_features(records, out_path);
        std::printf("wrote %s (%zu runs)\n", out_path.c_str(), records.size());
        return 0;
    }

    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + out_path);

    if (analysis == "drift") {
        out << "run_id,step,distance\n";
        char buf[64];
        for (const auto& r : records) {
            const DriftCurve curve = drift_curve(r);
            for (const auto& [step, distance] : curve.distances) {
                std::snprintf(buf, sizeof buf, "%.9g", distance);
                out << r.run_id << ',' << step << ',' << buf << '\n';
            }
        }
        std::printf("wrote %s (%zu runs)\n", out_path.c_str(), records.size());
        return 0;
    }

    if (analysis == "provenance") {
        out << "run_id,source,to_tool,to_step,to_argument,shared_tokens,coverage,"
               "source_poisoned\n";
        char buf[64];
        for (const auto& r : records) {
            const auto edges = provenance_attribute(r);
            for (const auto& e : edges) {
                std::snprintf(buf, sizeof buf, "%.9g", e.coverage);
                out << r.run_id << ',' << e.source_label() << ',' << e.to_tool << ','
                    << e.to_step << ',' << e.to_argument << ',' << e.shared_tokens << ','
                    << buf << ',' << (e.source_poisoned ? 1 : 0) << '\n';
            }
            const DualCompletionReport report = detect_dual_completion(r, edges);
            for (const auto& f : report.findings) {
                std::printf("%s: step %d %s to=%s %s%s\n", r.run_id.c_str(), f.step,
                            f.tool.c_str(), f.recipient.c_str(),
                            f.malicious ? "MALICIOUS" : "legitimate",
                            f.has_poisoned_edge ? " [traced to poisoned source]" : "");
            }
            if (report.dual_completion) {
                std::printf("%s: dual completion detected\n", r.run_id.c_str());
            }
        }
        std::printf("wrote %s (%zu runs)\n", out_path.c_str(), records.size());
        return 0;
    }
    throw ConfigError("unknown analysis: " + analysis);
}

int cmd_validate(const std::string& input) {
    ParsedTrace trace;
    try {
        trace = parse_trace(input);
    } catch (const TraceParseError& e) {
        std::printf("INVALID %s: %s\n", input.c_str(), e.what());
        return 1;
    }

    auto fail = [&](const std::string& why) {
        std::printf("INVALID %s: %s\n", input.c_str(), why.c_str());
        return 1;
    };

    const StageAnnotation annotation = annotate_stages(trace.events);
    for (const auto& e : trace.events) {
        if (e.event_type == EventType::CanaryInResult) {
            const bool relayed =
                (e.tool_name == "read_memory" && e.agent == AgentId::B) ||
                e.tool_name == "delegation";
            const auto expected = relayed ? KillChainStage::Relayed : KillChainStage::Exposed;
            if (e.stage != expected) {
                return fail("canary_in_result at step " + std::to_string(e.step) +
                            " carries the wrong stage label");
            }
        } else if (e.event_type == EventType::CanaryInArgs) {
            const auto expected = e.tool_name == "write_memory" ? KillChainStage::Persisted
                                                                : KillChainStage::Executed;
            if (e.stage != expected) {
                return fail("canary_in_args at step " + std::to_string(e.step) +
                            " carries the wrong stage label");
            }
        }
    }
    if (!trace.header.attacked) {
        for (const auto& e : trace.events) {
            if (e.canary) return fail("clean run contains canary events");
        }
    }

    // Cross-check against the manifest when the trace sits in a batch dir.
    const fs::path manifest_path = fs::path(input).parent_path() / "manifest.jsonl";
    if (fs::exists(manifest_path)) {
        for (const auto& entry : load_manifest(fs::path(input).parent_path())) {
            if (entry.run_id != trace.header.run_id) continue;
            if (entry.furthest_stage != annotation.furthest) {
                return fail("manifest furthest_stage disagrees with re-annotation");
            }
            std::vector<KillChainStage> reached;
            for (auto s : kAllStages) {
                if (annotation.has(s)) reached.push_back(s);
            }
            if (entry.reached != reached) {
                return fail("manifest reached set disagrees with re-annotation");
            }
        }
    }
    std::printf("OK %s (%zu events)\n", input.c_str(), trace.events.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-injection kill-chain evaluation harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir, runs_dir, input, out_path;
    std::string format = "md";
    std::string analysis = "features";
    int parallel = 1;
    bool zero_timestamps = true;

    auto* run = app.add_subcommand("run", "execute a batch config");
    run->add_option("--config", config_path, "batch config JSON")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    run->add_option("--parallel", parallel, "max concurrent runs");
    run->add_flag("--zero-timestamps,!--no-zero-timestamps", zero_timestamps,
                  "omit wall-clock timestamps (default on, for reproducible traces)");

    auto* report = app.add_subcommand("report", "aggregate a batch directory");
    report->add_option("--runs", runs_dir, "batch output directory")->required();
    report->add_option("--format", format, "csv or md")
        ->check(CLI::IsMember({"csv", "md"}));

    auto* forensics = app.add_subcommand("forensics", "post-hoc trajectory analysis");
    forensics->add_option("--input", input, "trace file or batch directory")->required();
    forensics->add_option("--analysis", analysis, "provenance, drift or features")
        ->check(CLI::IsMember({"provenance", "drift", "features"}));
    forensics->add_option("--out", out_path, "output file")->required();

    auto* validate = app.add_subcommand("validate", "schema + stage consistency check");
    validate->add_option("--input", input, "trace file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, parallel, zero_timestamps);
        if (report->parsed()) return cmd_report(runs_dir, format);
        if (forensics->parsed()) return cmd_forensics(input, analysis, out_path);
        if (validate->parsed()) return cmd_validate(input);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const TraceParseError& e) {
        std::fprintf(stderr, "trace error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
