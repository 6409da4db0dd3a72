#include <racer/config.hpp>
#include <racer/pipeline.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace {

constexpr const char* kDescription =
    "Turns interview transcripts into robust thematic cluster assignments:\n"
    "per-subject answer retrieval, expert-guided or discovered clustering,\n"
    "repeated re-clustering, majority voting with confidence scores, and\n"
    "agreement statistics against human evaluators.";

void print_outcome(const racer::pipeline::PipelineOutcome& outcome) {
    for (const auto& stage : outcome.stages) {
        const char* state = stage.skipped ? "skipped" : stage.partial ? "partial" : "done";
        std::printf("%-10s %s\n", stage.stage.c_str(), state);
        for (const auto& note : stage.notes) std::printf("           %s\n", note.c_str());
    }
    for (const auto& error : outcome.errors) std::fprintf(stderr, "error: %s\n", error.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{kDescription, "racer"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string stage_name;
    std::string output_dir;
    std::string mock_script;
    std::string replay_log;
    int workers = 0;
    bool fresh = false;
    bool resume = false;

    app.add_option("--config", config_path, "Pipeline configuration file (JSON)");
    app.add_option("--stage", stage_name, "Run a single stage by name (alternative to the subcommands)");
    app.add_option("--workers", workers, "Override the configured worker count");
    app.add_option("--output-dir", output_dir, "Override the configured output directory");
    app.add_option("--mock-script", mock_script, "Override the backend with a scripted-response file");
    app.add_option("--replay-log", replay_log,
                   "Recorded responses for the replay subcommand (default: <output-dir>/replay_log.jsonl)");
    auto* fresh_flag = app.add_flag("--fresh", fresh, "Discard previous outputs before running");
    auto* resume_flag =
        app.add_flag("--resume", resume, "Keep completed stages (the default behavior)");
    fresh_flag->excludes(resume_flag);

    std::vector<std::string> commands;
    for (racer::pipeline::Stage stage : racer::pipeline::all_stages())
        commands.push_back(racer::pipeline::to_string(stage));
    commands.push_back("all");
    commands.push_back("replay");
    for (const auto& name : commands) {
        auto* sub =
            app.add_subcommand(name, name == "all"      ? "Run every stage in order"
                                     : name == "replay" ? "Re-run every stage from a recorded response log"
                                                        : "Run the " + name + " stage");
        sub->fallthrough();  // global flags may follow the subcommand
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::string command;
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    if (!stage_name.empty()) {
        if (!command.empty()) {
            std::fprintf(stderr, "error: give either a subcommand or --stage, not both\n");
            return 2;
        }
        if (std::find(commands.begin(), commands.end(), stage_name) == commands.end()) {
            std::fprintf(stderr, "error: unknown stage \"%s\"\n", stage_name.c_str());
            return 2;
        }
        command = stage_name;
    }
    if (command.empty()) {
        std::fprintf(stderr, "error: pick a stage: %s\n",
                     racer::join(commands, ", ").c_str());
        return 2;
    }
    if (config_path.empty()) {
        std::fprintf(stderr, "error: --config is required\n");
        return 2;
    }

    racer::config::ConfigResult loaded = racer::config::load_config(config_path);
    racer::config::PipelineConfig config = loaded.config;
    if (workers > 0) config.workers = workers;
    if (!output_dir.empty()) config.output_dir = std::filesystem::absolute(output_dir);
    if (!mock_script.empty()) {
        config.backend.mock_script_path = std::filesystem::absolute(mock_script).string();
        config.backend.endpoint.reset();
    }

    // Flags form the effective config; invariants apply to it. Structural
    // problems (unreadable file, bad JSON, unknown keys, wrong types) are the
    // loader violations that are not plain invariant findings.
    std::vector<std::string> violations = racer::config::validate_config(config);
    const std::vector<std::string> baseline = racer::config::validate_config(loaded.config);
    for (const auto& v : loaded.violations)
        if (std::find(baseline.begin(), baseline.end(), v) == baseline.end())
            violations.push_back(v);
    if (!violations.empty()) {
        for (const auto& v : violations) std::fprintf(stderr, "error: %s\n", v.c_str());
        return 2;
    }

    racer::pipeline::RunOptions options;
    options.fresh = fresh;
    std::vector<racer::pipeline::Stage> stages;
    if (command == "all") {
        stages = racer::pipeline::all_stages();
    } else if (command == "replay") {
        stages = racer::pipeline::all_stages();
        options.replay_log = replay_log.empty()
                                 ? config.output_dir / "replay_log.jsonl"
                                 : std::filesystem::absolute(replay_log);
        // Replaying over finished artifacts would skip everything.
        if (!resume) options.fresh = true;
    } else {
        stages = {*racer::pipeline::stage_from_string(command)};
    }

    racer::pipeline::Pipeline pipeline(std::move(config), std::move(options));
    racer::pipeline::PipelineOutcome outcome = pipeline.run(stages);
    print_outcome(outcome);
    return outcome.exit_code;
}
