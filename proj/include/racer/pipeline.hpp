#pragma once

#include <racer/cluster.hpp>
#include <racer/common.hpp>
#include <racer/config.hpp>
#include <racer/corpus.hpp>
#include <racer/http_backend.hpp>
#include <racer/llm.hpp>
#include <racer/report.hpp>
#include <racer/retrieve.hpp>
#include <racer/stats.hpp>
#include <racer/vote.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace racer::pipeline {

// ---------------------------------------------------------------------------
// stages

enum class Stage { Ingest, Retrieve, Cluster, Recluster, Vote, Analyze, Report };

inline const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages{Stage::Ingest,    Stage::Retrieve, Stage::Cluster,
                                           Stage::Recluster, Stage::Vote,     Stage::Analyze,
                                           Stage::Report};
    return stages;
}

inline std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::Ingest: return "ingest";
        case Stage::Retrieve: return "retrieve";
        case Stage::Cluster: return "cluster";
        case Stage::Recluster: return "recluster";
        case Stage::Vote: return "vote";
        case Stage::Analyze: return "analyze";
        case Stage::Report: return "report";
    }
    return "ingest";
}

inline std::optional<Stage> stage_from_string(const std::string& name) {
    for (Stage stage : all_stages())
        if (to_string(stage) == name) return stage;
    return std::nullopt;
}

struct RunOptions {
    bool fresh = false;  // discard prior outputs before running
    std::optional<std::filesystem::path> replay_log;
};

struct StageReport {
    std::string stage;
    bool skipped = false;  // completion marker already present
    bool partial = false;  // some subjects/questions/runs exhausted their attempt cap
    std::vector<std::string> notes;
};

struct PipelineOutcome {
    std::vector<StageReport> stages;
    std::vector<std::string> errors;
    int exit_code = 0;  // 0 clean, 1 partial, 2 configuration or dependency error
};

// ---------------------------------------------------------------------------
// output layout

class Paths {
  public:
    explicit Paths(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path replay_log() const { return root_ / "replay_log.jsonl"; }

    std::filesystem::path ingest_summary() const { return root_ / "ingest" / "corpus.json"; }

    std::filesystem::path retrieve_dir() const { return root_ / "retrieve"; }
    std::filesystem::path retrieve_tsv(const SubjectId& subject) const {
        return retrieve_dir() / (subject.value + ".tsv");
    }
    std::filesystem::path retrieve_stats() const { return retrieve_dir() / "stats.json"; }

    std::filesystem::path cluster_dir() const { return root_ / "cluster"; }
    std::filesystem::path defs_tsv(int question) const {
        return cluster_dir() / ("q" + std::to_string(question) + ".defs.tsv");
    }
    std::filesystem::path run_tsv(int question, int run) const {
        const auto name = "q" + std::to_string(question) + ".run" + std::to_string(run) + ".tsv";
        return run == 0 ? cluster_dir() / name : recluster_dir() / name;
    }
    std::filesystem::path cluster_stats() const { return cluster_dir() / "stats.json"; }

    std::filesystem::path recluster_dir() const { return root_ / "recluster"; }
    std::filesystem::path recluster_stats() const { return recluster_dir() / "stats.json"; }

    std::filesystem::path vote_dir() const { return root_ / "vote"; }
    std::filesystem::path robust_tsv() const { return vote_dir() / "robust.tsv"; }
    std::filesystem::path vote_stats() const { return vote_dir() / "stats.json"; }

    std::filesystem::path analyze_dir() const { return root_ / "analyze"; }
    std::filesystem::path agreement_json() const { return analyze_dir() / "agreement.json"; }
    std::filesystem::path per_subject_csv() const { return analyze_dir() / "per_subject.csv"; }
    std::filesystem::path per_question_csv() const { return analyze_dir() / "per_question.csv"; }
    std::filesystem::path confidence_json() const {
        return analyze_dir() / "confidence_vs_concordance.json";
    }

    std::filesystem::path report_dir() const { return root_ / "report"; }
    std::filesystem::path frequency_csv(int question) const {
        return report_dir() / ("q" + std::to_string(question) + ".csv");
    }
    std::filesystem::path report_summary() const { return report_dir() / "corpus.json"; }
    std::filesystem::path manifest_json() const { return report_dir() / "manifest.json"; }

  private:
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// artifact round-trips; every stage reads its inputs from disk, so a resumed
// run and a staged run see identical bytes

inline std::string render_retrieve_tsv(const std::vector<retrieve::RetrievedAnswer>& answers) {
    std::string out = "question_index\tanswer\tevidence\tevidence_verified\n";
    for (const auto& a : answers) {
        out += std::to_string(a.question_index);
        out += '\t';
        out += a.answer;
        out += '\t';
        out += a.evidence;
        out += '\t';
        out += retrieve::to_string(a.evidence_verified);
        out += '\n';
    }
    return out;
}

inline std::vector<retrieve::RetrievedAnswer> parse_retrieve_tsv(const std::string& text,
                                                                 const SubjectId& subject) {
    std::vector<retrieve::RetrievedAnswer> answers;
    const auto lines = split_lines(text);
    for (size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split(lines[i], '\t');
        if (cells.size() != 4)
            throw std::runtime_error("retrieved-answer row needs 4 columns: " + lines[i]);
        retrieve::RetrievedAnswer a;
        a.subject = subject;
        a.question_index = std::stoi(cells[0]);
        a.answer = cells[1];
        a.evidence = cells[2];
        a.evidence_verified = retrieve::verification_from_string(cells[3]);
        answers.push_back(std::move(a));
    }
    return answers;
}

inline std::string render_defs_tsv(const cluster::ClusterSchemaResult& defs) {
    std::string out = "cluster_id\tcluster_name\tcluster_description\n";
    for (const auto& def : defs.defs) {
        out += def.cluster_id;
        out += '\t';
        out += def.name;
        out += '\t';
        out += def.description;
        out += '\n';
    }
    return out;
}

inline cluster::ClusterSchemaResult parse_defs_tsv(const std::string& text,
                                                   const corpus::Question& question) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& line : split_lines(text)) {
        auto cells = split(line, '\t');
        if (!cells.empty() && cells[0] == "cluster_id") continue;
        rows.push_back(std::move(cells));
    }
    auto parsed = cluster::parse_defs_rows(rows, question);
    if (!parsed.ok())
        throw std::runtime_error("stored cluster definitions for question " +
                                 std::to_string(question.index) +
                                 " no longer parse: " + parsed.error().detail);
    return parsed.value();
}

inline std::string render_assignments_tsv(const std::vector<cluster::ClusterAssignment>& rows) {
    std::vector<const cluster::ClusterAssignment*> sorted;
    for (const auto& row : rows) sorted.push_back(&row);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->subject < b->subject; });
    std::string out = "subject_id\tprimary\tlabels\n";
    for (const auto* row : sorted) {
        out += row->subject.value;
        out += '\t';
        out += row->primary.value_or("");
        out += '\t';
        out += join(row->labels, ",");
        out += '\n';
    }
    return out;
}

inline std::vector<cluster::ClusterAssignment> parse_assignments_tsv(const std::string& text,
                                                                     int question_index,
                                                                     int run_index) {
    std::vector<cluster::ClusterAssignment> rows;
    const auto lines = split_lines(text);
    for (size_t i = 1; i < lines.size(); ++i) {
        const auto cells = split(lines[i], '\t');
        if (cells.size() != 3)
            throw std::runtime_error("assignment row needs 3 columns: " + lines[i]);
        cluster::ClusterAssignment row;
        row.subject = SubjectId{cells[0]};
        row.question_index = question_index;
        row.run_index = run_index;
        if (!cells[1].empty()) row.primary = cells[1];
        if (!cells[2].empty()) row.labels = split(cells[2], ',');
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// pipeline

// Configuration and dependency problems; stops the run with exit code 2.
struct StageError : std::runtime_error {
    explicit StageError(const std::string& message) : std::runtime_error(message) {}
};

class Pipeline {
  public:
    Pipeline(config::PipelineConfig config, RunOptions options)
        : config_(std::move(config)), options_(std::move(options)), paths_(config_.output_dir) {}

    const Paths& paths() const { return paths_; }

    PipelineOutcome run(const std::vector<Stage>& stages) {
        PipelineOutcome outcome;
        std::string current = "pipeline";
        try {
            prepare();
            for (Stage stage : stages) {
                current = to_string(stage);
                outcome.stages.push_back(run_stage(stage));
            }
        } catch (const std::exception& e) {
            outcome.errors.push_back(current + ": " + e.what());
            outcome.exit_code = 2;
            return outcome;
        }
        for (const auto& stage : outcome.stages)
            if (stage.partial) outcome.exit_code = 1;
        return outcome;
    }

  private:
    // ---- plumbing ----------------------------------------------------------

    void prepare() {
        if (options_.replay_log) replay_entries_ = llm::load_replay_log(*options_.replay_log);
        if (options_.fresh) std::filesystem::remove_all(paths_.root());
    }

    bool stage_complete(Stage stage) const {
        return std::filesystem::exists(marker(stage));
    }

    std::filesystem::path marker(Stage stage) const {
        switch (stage) {
            case Stage::Ingest: return paths_.ingest_summary();
            case Stage::Retrieve: return paths_.retrieve_stats();
            case Stage::Cluster: return paths_.cluster_stats();
            case Stage::Recluster: return paths_.recluster_stats();
            case Stage::Vote: return paths_.vote_stats();
            case Stage::Analyze: return paths_.agreement_json();
            case Stage::Report: return paths_.manifest_json();
        }
        return paths_.ingest_summary();
    }

    void require(Stage dependency) const {
        if (!stage_complete(dependency))
            throw StageError("run the " + to_string(dependency) + " stage first");
    }

    StageReport run_stage(Stage stage) {
        StageReport report;
        report.stage = to_string(stage);
        if (stage_complete(stage)) {
            report.skipped = true;
            report.partial = persisted_partial(stage);
            return report;
        }
        switch (stage) {
            case Stage::Ingest: do_ingest(report); break;
            case Stage::Retrieve: do_retrieve(report); break;
            case Stage::Cluster: do_cluster(report); break;
            case Stage::Recluster: do_recluster(report); break;
            case Stage::Vote: do_vote(report); break;
            case Stage::Analyze: do_analyze(report); break;
            case Stage::Report: do_report(report); break;
        }
        return report;
    }

    // A resumed run must still exit 1 when a skipped stage recorded failures.
    bool persisted_partial(Stage stage) const {
        try {
            switch (stage) {
                case Stage::Retrieve:
                    return !read_json(paths_.retrieve_stats()).at("failed_subjects").empty();
                case Stage::Cluster:
                    return !read_json(paths_.cluster_stats()).at("failed_questions").empty();
                case Stage::Recluster:
                    return !read_json(paths_.recluster_stats()).at("failed_runs").empty();
                default: return false;
            }
        } catch (const std::exception&) {
            return false;
        }
    }

    static nlohmann::json read_json(const std::filesystem::path& path) {
        return nlohmann::json::parse(read_file(path));
    }

    static void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
        write_file(path, j.dump(2) + "\n");
    }

    corpus::Corpus load_inputs() const {
        return corpus::load_corpus(config_.corpus_dir, config_.metadata_path,
                                   config_.schema_path);
    }

    llm::LlmClient make_client() {
        std::shared_ptr<llm::Backend> backend;
        bool record = false;
        if (options_.replay_log) {
            backend = std::make_shared<llm::ReplayBackend>(replay_entries_);
        } else if (config_.backend.mock_script_path) {
            backend = std::make_shared<llm::ScriptedBackend>(
                llm::BackendScript::load(*config_.backend.mock_script_path));
            record = true;
        } else {
            const char* key = std::getenv(config_.backend.api_key_env.c_str());
            if (key == nullptr || *key == '\0')
                throw StageError("environment variable " + config_.backend.api_key_env +
                                 " is empty; credentials only come from the environment");
            backend = std::make_shared<llm::HttpBackend>(*config_.backend.endpoint, key);
            record = true;
        }
        llm::LlmClientOptions opts;
        opts.standard = config_.backend.standard;
        opts.large = config_.backend.large;
        opts.token_margin = config_.backend.token_margin;
        opts.retry.attempts = config_.backend.retry_attempts;
        opts.retry.initial_backoff =
            std::chrono::milliseconds(config_.backend.retry_initial_backoff_ms);
        opts.requests_per_minute = config_.backend.requests_per_minute;
        opts.tokens_per_minute = config_.backend.tokens_per_minute;
        if (record) opts.replay_log_path = paths_.replay_log();
        return llm::LlmClient(std::move(backend), std::move(opts));
    }

    int stage_max_tokens(int fallback) const {
        return config_.backend.max_output_tokens > 0 ? config_.backend.max_output_tokens
                                                     : fallback;
    }

    static double round_tenth(double x) { return std::round(x * 10.0) / 10.0; }

    // ---- ingest ------------------------------------------------------------

    void do_ingest(StageReport& report) {
        const corpus::Corpus corpus = load_inputs();
        nlohmann::json subjects = nlohmann::json::array();
        for (const auto& t : corpus.transcripts) {
            subjects.push_back({{"subject_id", t.subject.value},
                                {"is_student", corpus.profile(t.subject).is_student},
                                {"turns", t.turns.size()},
                                {"word_count", t.word_count()}});
        }
        write_json(paths_.ingest_summary(), {{"questions", corpus.schema.questions.size()},
                                             {"subjects", subjects},
                                             {"warnings", corpus.warnings}});
        for (const auto& w : corpus.warnings) report.notes.push_back(w);
    }

    // ---- retrieve ----------------------------------------------------------

    void do_retrieve(StageReport& report) {
        const corpus::Corpus corpus = load_inputs();
        llm::LlmClient client = make_client();
        retrieve::RetrieveOptions options;
        options.attempt_cap = config_.attempt_cap;
        options.temperature = config_.temperatures.retrieve;
        options.max_output_tokens = stage_max_tokens(2048);
        options.workers = config_.workers;
        const retrieve::RetrievalOutcome outcome = retrieve::retrieve_all(corpus, client, options);

        std::set<SubjectId> failed(outcome.failed_subjects.begin(),
                                   outcome.failed_subjects.end());
        std::map<SubjectId, std::vector<retrieve::RetrievedAnswer>> by_subject;
        for (const auto& p : corpus.profiles)
            if (!failed.count(p.subject)) by_subject[p.subject];
        for (const auto& a : outcome.answers) by_subject[a.subject].push_back(a);
        for (const auto& [subject, answers] : by_subject)
            write_file(paths_.retrieve_tsv(subject), render_retrieve_tsv(answers));

        int exact = 0;
        int normalized = 0;
        nlohmann::json unverified = nlohmann::json::array();
        for (const auto& a : outcome.answers) {
            switch (a.evidence_verified) {
                case retrieve::Verification::Exact: ++exact; break;
                case retrieve::Verification::Normalized: ++normalized; break;
                case retrieve::Verification::Unverified:
                    unverified.push_back({{"subject_id", a.subject.value},
                                          {"question_index", a.question_index}});
                    break;
            }
        }
        nlohmann::json per_subject = nlohmann::json::array();
        for (const auto& s : outcome.stats) {
            nlohmann::json reasons = nlohmann::json::array();
            for (auto r : s.invalid_reasons) reasons.push_back(retrieve::to_string(r));
            per_subject.push_back({{"subject_id", s.subject.value},
                                   {"attempts", s.attempts},
                                   {"invalid_reasons", reasons},
                                   {"failed", s.failed},
                                   {"failure_note", s.failure_note}});
        }
        nlohmann::json failed_json = nlohmann::json::array();
        for (const auto& s : outcome.failed_subjects) failed_json.push_back(s.value);
        write_json(paths_.retrieve_stats(),
                   {{"total_calls", outcome.total_calls},
                    {"extra_call_ratio", outcome.extra_call_ratio},
                    {"failed_subjects", failed_json},
                    {"evidence", {{"exact", exact},
                                  {"normalized", normalized},
                                  {"unverified", unverified.size()},
                                  {"unverified_pairs", unverified}}},
                    {"per_subject", per_subject}});
        report.partial = !outcome.failed_subjects.empty();
        for (const auto& s : outcome.failed_subjects)
            report.notes.push_back("subject " + s.value + " failed");
    }

    // Answers for every subject whose retrieval artifact exists.
    std::vector<retrieve::RetrievedAnswer> load_answers(const corpus::Corpus& corpus) const {
        std::vector<retrieve::RetrievedAnswer> answers;
        for (const auto& p : corpus.profiles) {
            const auto path = paths_.retrieve_tsv(p.subject);
            if (!std::filesystem::exists(path)) continue;
            auto rows = parse_retrieve_tsv(read_file(path), p.subject);
            answers.insert(answers.end(), rows.begin(), rows.end());
        }
        return answers;
    }

    // ---- cluster -----------------------------------------------------------

    void do_cluster(StageReport& report) {
        require(Stage::Retrieve);
        const corpus::Corpus corpus = load_inputs();
        const auto aggregated = cluster::aggregate(load_answers(corpus), corpus.schema);
        llm::LlmClient client = make_client();
        cluster::ClusterOptions options;
        options.attempt_cap = config_.attempt_cap;
        options.temperature = config_.temperatures.cluster;
        options.max_output_tokens = stage_max_tokens(4096);
        options.workers = config_.workers;
        const cluster::ClusterOutcome outcome =
            cluster::cluster_all(aggregated, corpus.schema, client, options);

        std::set<int> failed(outcome.failed_questions.begin(), outcome.failed_questions.end());
        for (const auto& result : outcome.results) {
            const int q = result.stats.question_index;
            if (failed.count(q)) continue;
            write_file(paths_.defs_tsv(q), render_defs_tsv(result.response.defs));
            write_file(paths_.run_tsv(q, 0),
                       render_assignments_tsv(result.response.assignments));
        }
        nlohmann::json per_question = nlohmann::json::array();
        for (const auto& result : outcome.results) {
            nlohmann::json reasons = nlohmann::json::array();
            for (auto r : result.stats.invalid_reasons)
                reasons.push_back(cluster::to_string(r));
            per_question.push_back({{"question_index", result.stats.question_index},
                                    {"attempts", result.stats.attempts},
                                    {"invalid_reasons", reasons},
                                    {"failed", result.stats.failed},
                                    {"failure_note", result.stats.failure_note}});
        }
        write_json(paths_.cluster_stats(), {{"total_calls", outcome.total_calls},
                                            {"extra_call_ratio", outcome.extra_call_ratio},
                                            {"failed_questions", outcome.failed_questions},
                                            {"per_question", per_question}});
        report.partial = !outcome.failed_questions.empty();
        for (int q : outcome.failed_questions)
            report.notes.push_back("question " + std::to_string(q) + " failed");
    }

    // Questions whose run-0 artifacts exist, in schema order.
    std::vector<int> clustered_questions(const corpus::QuestionSchema& schema) const {
        std::vector<int> questions;
        for (const auto& q : schema.questions) {
            if (std::filesystem::exists(paths_.defs_tsv(q.index)) &&
                std::filesystem::exists(paths_.run_tsv(q.index, 0)))
                questions.push_back(q.index);
        }
        return questions;
    }

    // ---- recluster ---------------------------------------------------------

    void do_recluster(StageReport& report) {
        require(Stage::Cluster);
        const corpus::Corpus corpus = load_inputs();
        const auto aggregated = cluster::aggregate(load_answers(corpus), corpus.schema);
        const int repetitions = config_.run_count - 1;

        llm::LlmClient client = make_client();
        cluster::ClusterOptions options;
        options.attempt_cap = config_.attempt_cap;
        options.temperature = config_.temperatures.recluster;
        options.max_output_tokens = stage_max_tokens(4096);
        options.workers = config_.workers;

        int total_calls = 0;
        int attempted = 0;
        nlohmann::json failed_runs = nlohmann::json::array();
        nlohmann::json per_run = nlohmann::json::array();
        for (int q : clustered_questions(corpus.schema)) {
            const corpus::Question& question = corpus.schema.at(q);
            const auto defs = parse_defs_tsv(read_file(paths_.defs_tsv(q)), question);
            const cluster::AggregatedQuestion* aq = nullptr;
            for (const auto& candidate : aggregated)
                if (candidate.question_index == q) aq = &candidate;
            if (aq == nullptr) continue;
            const vote::ReclusterOutcome outcome =
                vote::recluster(*aq, question, defs, client, options, repetitions);
            total_calls += outcome.total_calls;
            attempted += repetitions;
            for (const auto& run : outcome.runs) {
                if (!run.stats.failed)
                    write_file(paths_.run_tsv(q, run.run_index),
                               render_assignments_tsv(run.assignments));
                nlohmann::json reasons = nlohmann::json::array();
                for (auto r : run.stats.invalid_reasons)
                    reasons.push_back(cluster::to_string(r));
                per_run.push_back({{"question_index", q},
                                   {"run_index", run.run_index},
                                   {"attempts", run.stats.attempts},
                                   {"invalid_reasons", reasons},
                                   {"failed", run.stats.failed},
                                   {"failure_note", run.stats.failure_note}});
            }
            for (int run_index : outcome.failed_runs) {
                failed_runs.push_back({{"question_index", q}, {"run_index", run_index}});
                report.notes.push_back("question " + std::to_string(q) + " run " +
                                       std::to_string(run_index) + " failed");
            }
        }
        const double ratio =
            attempted == 0 ? 0.0 : static_cast<double>(total_calls - attempted) / attempted;
        write_json(paths_.recluster_stats(), {{"total_calls", total_calls},
                                              {"extra_call_ratio", ratio},
                                              {"run_count", config_.run_count},
                                              {"failed_runs", failed_runs},
                                              {"per_run", per_run}});
        report.partial = !failed_runs.empty();
    }

    // ---- vote --------------------------------------------------------------

    void do_vote(StageReport& report) {
        require(Stage::Cluster);
        require(Stage::Recluster);
        const corpus::QuestionSchema schema = corpus::load_schema(config_.schema_path);

        std::vector<vote::RobustAssignment> robust;
        nlohmann::json short_questions = nlohmann::json::array();
        nlohmann::json skipped_questions = nlohmann::json::array();
        for (const auto& q : schema.questions) {
            if (!std::filesystem::exists(paths_.run_tsv(q.index, 0))) {
                if (std::filesystem::exists(paths_.defs_tsv(q.index)))
                    skipped_questions.push_back(q.index);
                continue;
            }
            std::vector<std::vector<cluster::ClusterAssignment>> runs;
            for (int run = 0; run < config_.run_count; ++run) {
                const auto path = paths_.run_tsv(q.index, run);
                if (!std::filesystem::exists(path)) continue;
                runs.push_back(parse_assignments_tsv(read_file(path), q.index, run));
            }
            if (static_cast<int>(runs.size()) < config_.run_count) {
                short_questions.push_back(q.index);
                report.notes.push_back("question " + std::to_string(q.index) + " voted over " +
                                       std::to_string(runs.size()) + " of " +
                                       std::to_string(config_.run_count) + " runs");
            }
            auto voted = vote::majority_vote(runs);
            robust.insert(robust.end(), voted.begin(), voted.end());
        }
        write_file(paths_.robust_tsv(), vote::render_robust_tsv(robust));

        const vote::RobustnessStats stats = vote::robustness_stats(robust);
        nlohmann::json per_question = nlohmann::json::object();
        for (const auto& [q, histogram] : stats.per_question) {
            nlohmann::json h = nlohmann::json::object();
            for (const auto& [confidence, count] : histogram)
                h[std::to_string(confidence)] = count;
            per_question[std::to_string(q)] = h;
        }
        write_json(paths_.vote_stats(),
                   {{"total_pairs", stats.total_pairs},
                    {"fully_robust_count", stats.fully_robust_count},
                    {"fully_robust_percent", round_tenth(stats.fully_robust_percent())},
                    {"unassigned_count", stats.unassigned_count},
                    {"unassigned_percent", round_tenth(stats.unassigned_percent())},
                    {"run_count", config_.run_count},
                    {"per_question", per_question},
                    {"questions_with_missing_runs", short_questions},
                    {"skipped_questions", skipped_questions}});
    }

    // ---- analyze -----------------------------------------------------------

    void do_analyze(StageReport& report) {
        require(Stage::Vote);
        const corpus::QuestionSchema schema = corpus::load_schema(config_.schema_path);
        const auto robust =
            vote::parse_robust_tsv(read_file(paths_.robust_tsv()), config_.run_count);

        std::vector<stats::EvaluatorLabels> evaluators;
        evaluators.push_back(
            stats::machine_labels(robust, schema, config_.machine_evaluator_id));
        for (const auto& path : config_.evaluator_label_paths) {
            auto parsed = stats::parse_evaluator_tsv(read_file(path));
            evaluators.insert(evaluators.end(), parsed.begin(), parsed.end());
        }
        std::set<std::string> ids;
        for (const auto& e : evaluators)
            if (!ids.insert(e.evaluator_id).second)
                throw StageError("duplicate evaluator id: " + e.evaluator_id);
        if (evaluators.size() == 1)
            report.notes.push_back("no human evaluator labels configured");

        const auto records = stats::build_agreement_records(evaluators, schema);

        nlohmann::json evaluator_ids = nlohmann::json::array();
        for (const auto& e : evaluators) evaluator_ids.push_back(e.evaluator_id);

        nlohmann::json pairwise = nlohmann::json::array();
        nlohmann::json kappa = nlohmann::json::array();
        std::string per_subject_csv =
            "subject_id,evaluator_a,evaluator_b,mean_concordance,n_records\n";
        std::string per_question_csv =
            "question_index,evaluator_a,evaluator_b,mean_concordance,n_records\n";
        for (size_t i = 0; i < evaluators.size(); ++i) {
            for (size_t j = i + 1; j < evaluators.size(); ++j) {
                const std::string& a = evaluators[i].evaluator_id;
                const std::string& b = evaluators[j].evaluator_id;
                const auto ratio = stats::pairwise_concordance(records, a, b);
                std::map<SubjectId, std::pair<double, int>> by_subject;
                std::map<int, std::pair<double, int>> by_question;
                std::set<int> exclusive_questions;
                int shared = 0;
                for (const auto& record : records) {
                    if (!record.labels.count(a) || !record.labels.count(b)) continue;
                    ++shared;
                    const double score = stats::concordance_score(
                        record.labels.at(a), record.labels.at(b), record.exclusive);
                    by_subject[record.subject].first += score;
                    by_subject[record.subject].second += 1;
                    by_question[record.question_index].first += score;
                    by_question[record.question_index].second += 1;
                    if (record.exclusive) exclusive_questions.insert(record.question_index);
                }
                pairwise.push_back(
                    {{"a", a},
                     {"b", b},
                     {"concordance",
                      ratio ? nlohmann::json(*ratio) : nlohmann::json(nullptr)},
                     {"n", shared}});
                for (const auto& [subject, sums] : by_subject)
                    per_subject_csv += report::csv_escape(subject.value) + "," +
                                       report::csv_escape(a) + "," + report::csv_escape(b) +
                                       "," + format_double(sums.first / sums.second) + "," +
                                       std::to_string(sums.second) + "\n";
                for (const auto& [question, sums] : by_question)
                    per_question_csv += std::to_string(question) + "," +
                                        report::csv_escape(a) + "," + report::csv_escape(b) +
                                        "," + format_double(sums.first / sums.second) + "," +
                                        std::to_string(sums.second) + "\n";
                for (int q : exclusive_questions) {
                    const auto k = stats::cohens_kappa(evaluators[i], evaluators[j], q);
                    kappa.push_back(
                        {{"a", a},
                         {"b", b},
                         {"question_index", q},
                         {"kappa", k ? nlohmann::json(*k) : nlohmann::json(nullptr)}});
                }
            }
        }
        nlohmann::json kway(nullptr);
        if (evaluators.size() >= 2) {
            std::vector<std::string> all_ids;
            for (const auto& e : evaluators) all_ids.push_back(e.evaluator_id);
            if (auto value = stats::kway_concordance(records, all_ids)) kway = *value;
        }
        write_file(paths_.per_subject_csv(), per_subject_csv);
        write_file(paths_.per_question_csv(), per_question_csv);

        const auto confidence =
            stats::confidence_vs_concordance(robust, records, config_.machine_evaluator_id);
        write_json(paths_.confidence_json(), confidence_json(confidence));
        write_json(paths_.agreement_json(), {{"evaluators", evaluator_ids},
                                             {"pairwise", pairwise},
                                             {"kway", kway},
                                             {"kappa", kappa}});
    }

    static nlohmann::json confidence_json(const stats::ConfidenceConcordanceReport& report) {
        auto int_map = [](const std::map<int, int>& m) {
            nlohmann::json out = nlohmann::json::object();
            for (const auto& [k, v] : m) out[std::to_string(k)] = v;
            return out;
        };
        auto double_map = [](const std::map<int, double>& m) {
            nlohmann::json out = nlohmann::json::object();
            for (const auto& [k, v] : m) out[std::to_string(k)] = v;
            return out;
        };
        nlohmann::json spearman(nullptr);
        if (report.spearman.rho) {
            spearman = {{"rho", *report.spearman.rho},
                        {"p", report.spearman.p ? nlohmann::json(*report.spearman.p)
                                                : nlohmann::json(nullptr)},
                        {"stars", report.spearman.p
                                      ? nlohmann::json(stats::significance_stars(
                                            *report.spearman.p))
                                      : nlohmann::json(nullptr)}};
        }
        nlohmann::json chi_square(nullptr);
        if (report.chi_square.statistic) {
            chi_square = {{"statistic", *report.chi_square.statistic},
                          {"p", report.chi_square.p ? nlohmann::json(*report.chi_square.p)
                                                    : nlohmann::json(nullptr)},
                          {"stars", report.chi_square.p
                                        ? nlohmann::json(stats::significance_stars(
                                              *report.chi_square.p))
                                        : nlohmann::json(nullptr)}};
        }
        return {{"mean_confidence_by_question", double_map(report.mean_confidence_by_question)},
                {"pair_concordance_by_question",
                 double_map(report.pair_concordance_by_question)},
                {"concordant_confidence_histogram",
                 int_map(report.concordant_confidence_histogram)},
                {"nonconcordant_confidence_histogram",
                 int_map(report.nonconcordant_confidence_histogram)},
                {"spearman", spearman},
                {"chi_square", chi_square}};
    }

    // ---- report ------------------------------------------------------------

    void do_report(StageReport&) {
        require(Stage::Retrieve);
        require(Stage::Cluster);
        require(Stage::Recluster);
        require(Stage::Vote);
        require(Stage::Analyze);
        const corpus::QuestionSchema schema = corpus::load_schema(config_.schema_path);
        const auto robust =
            vote::parse_robust_tsv(read_file(paths_.robust_tsv()), config_.run_count);

        for (int q : clustered_questions(schema)) {
            const corpus::Question& question = schema.at(q);
            const auto defs = parse_defs_tsv(read_file(paths_.defs_tsv(q)), question);
            std::vector<std::vector<cluster::ClusterAssignment>> runs;
            for (int run = 0; run < config_.run_count; ++run) {
                const auto path = paths_.run_tsv(q, run);
                if (!std::filesystem::exists(path)) continue;
                runs.push_back(parse_assignments_tsv(read_file(path), q, run));
            }
            std::vector<vote::RobustAssignment> robust_q;
            for (const auto& r : robust)
                if (r.question_index == q) robust_q.push_back(r);
            const auto table = report::frequency_table(runs, robust_q, defs);
            write_file(paths_.frequency_csv(q), report::render_frequency_csv(table));
        }

        const nlohmann::json retrieve_stats = read_json(paths_.retrieve_stats());
        const nlohmann::json cluster_stats = read_json(paths_.cluster_stats());
        const nlohmann::json recluster_stats = read_json(paths_.recluster_stats());
        const nlohmann::json vote_stats = read_json(paths_.vote_stats());
        nlohmann::json ingest(nullptr);
        if (std::filesystem::exists(paths_.ingest_summary()))
            ingest = read_json(paths_.ingest_summary());
        write_json(paths_.report_summary(),
                   {{"ingest", ingest},
                    {"retrieve", retrieve_stats},
                    {"cluster", cluster_stats},
                    {"recluster", recluster_stats},
                    {"vote", vote_stats},
                    {"agreement", read_json(paths_.agreement_json())},
                    {"confidence_vs_concordance", read_json(paths_.confidence_json())},
                    {"failures", {{"subjects", retrieve_stats.at("failed_subjects")},
                                  {"questions", cluster_stats.at("failed_questions")},
                                  {"recluster_runs", recluster_stats.at("failed_runs")}}},
                    {"evidence", retrieve_stats.at("evidence")}});

        const report::Manifest manifest = report::build_manifest(paths_.root());
        write_file(paths_.manifest_json(), report::manifest_json(manifest));
    }

    config::PipelineConfig config_;
    RunOptions options_;
    Paths paths_;
    std::vector<llm::ReplayEntry> replay_entries_;
};

}  // namespace racer::pipeline
