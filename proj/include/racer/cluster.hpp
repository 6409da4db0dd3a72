#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "racer/common.hpp"
#include "racer/corpus.hpp"
#include "racer/llm.hpp"
#include "racer/retrieve.hpp"
#include "racer/workers.hpp"

namespace racer::cluster {

struct AggregatedRow {
    SubjectId subject;
    std::string answer;
};

struct AggregatedQuestion {
    int question_index = 0;
    std::vector<AggregatedRow> rows;  // sorted by subject for prompt determinism

    std::set<SubjectId> subject_set() const {
        std::set<SubjectId> s;
        for (const auto& r : rows) s.insert(r.subject);
        return s;
    }
};

enum class Level { Primary, Secondary };

struct ClusterDef {
    std::string cluster_id;  // "C1" primary, "C1.2" secondary
    std::string name;
    std::string description;
    Level level = Level::Primary;
    std::string parent;  // primary cluster_id, secondaries only
};

struct ClusterSchemaResult {
    int question_index = 0;
    corpus::ClusteringMode mode = corpus::ClusteringMode::LlmDiscoveredSingleLevel;
    std::vector<ClusterDef> defs;

    const ClusterDef* find(const std::string& id) const {
        for (const auto& d : defs)
            if (d.cluster_id == id) return &d;
        return nullptr;
    }
    std::vector<const ClusterDef*> primaries() const {
        std::vector<const ClusterDef*> out;
        for (const auto& d : defs)
            if (d.level == Level::Primary) out.push_back(&d);
        return out;
    }
    bool has_secondaries_under(const std::string& primary_id) const {
        for (const auto& d : defs)
            if (d.level == Level::Secondary && d.parent == primary_id) return true;
        return false;
    }
    /// The unclear/excluded bucket; parse validation guarantees presence.
    const ClusterDef* catch_all() const {
        for (const auto& d : defs)
            if (d.level == Level::Primary && corpus::is_catch_all_name(d.name)) return &d;
        return nullptr;
    }
};

struct ClusterAssignment {
    SubjectId subject;
    int question_index = 0;
    std::optional<std::string> primary;  // expert mode only
    std::vector<std::string> labels;     // sorted unique; secondaries (expert) or flat ids
    int run_index = 0;
};

enum class ClusterInvalidReason {
    IllFormatted,
    MissingSubjects,
    UnknownSubject,
    UndefinedCluster,
    MultiplePrimaries,
};

inline std::string to_string(ClusterInvalidReason r) {
    switch (r) {
        case ClusterInvalidReason::IllFormatted: return "ill-formatted";
        case ClusterInvalidReason::MissingSubjects: return "missing-subjects";
        case ClusterInvalidReason::UnknownSubject: return "unknown-subject";
        case ClusterInvalidReason::UndefinedCluster: return "undefined-cluster";
        case ClusterInvalidReason::MultiplePrimaries: return "multiple-primaries";
    }
    return "ill-formatted";
}

struct ClusterValidationFailure {
    ClusterInvalidReason reason;
    std::string detail;
};

// ---------------------------------------------------------------------------
// aggregation

/// Partition retrieved answers by question, rows sorted by subject. Questions
/// nobody answered produce no entry (there is nothing to cluster).
inline std::vector<AggregatedQuestion> aggregate(
    const std::vector<retrieve::RetrievedAnswer>& answers, const corpus::QuestionSchema& schema) {
    std::map<int, AggregatedQuestion> by_question;
    for (const auto& a : answers) {
        AggregatedQuestion& aq = by_question[a.question_index];
        aq.question_index = a.question_index;
        aq.rows.push_back(AggregatedRow{a.subject, a.answer});
    }
    std::vector<AggregatedQuestion> out;
    for (const auto& q : schema.questions) {
        auto it = by_question.find(q.index);
        if (it == by_question.end()) continue;
        AggregatedQuestion aq = std::move(it->second);
        std::sort(aq.rows.begin(), aq.rows.end(),
                  [](const auto& a, const auto& b) { return a.subject < b.subject; });
        out.push_back(std::move(aq));
    }
    return out;
}

// ---------------------------------------------------------------------------
// prompts

/// Two-level instruction for expert-guided questions; {clusters} is filled
/// with the question's verbatim cluster list.
inline constexpr std::string_view kExpertTemplateHead =
    "Cluster the responses in the table below at two levels.\n"
    "Top level clusters must be ";
inline constexpr std::string_view kExpertTemplateTail =
    ".\n"
    "Top level clusters have mutually-exclusive cluster membership.\n"
    "For the next level, cluster the responses from subjects belonging to each top-level cluster "
    "highlighting the common theme per cluster.\n"
    "Subjects can belong to multiple clusters at this level. \n"
    "\n"
    "Your response should be in tab-separated-values format, with the following columns:\n"
    "subject_id  top_level_cluster_id    secondary_cluster_ids\n"
    "\n"
    "Example output line: \n"
    "C-002   C1  \"C1.1,C1.2,C1.4\"\n"
    "\n";
inline constexpr std::string_view kExpertTemplateDefine =
    "Start your response by defining each top and secondary cluster in tab-separated-values "
    "format, with columns: \n"
    "cluster_id  cluster_name    cluster_description\n"
    "\n";
inline constexpr std::string_view kPromptFooter =
    "Note that some subject_ids may not be present in the prompt, and so should also not be "
    "present in your response.\n"
    "Provide both the (tab-separated) cluster-definitions table and the (tab-separated) "
    "cluster-assignments table in your response.\n"
    "\n";

/// Single-level instruction for discovered-mode questions.
inline constexpr std::string_view kDiscoveredHead =
    "Cluster the responses in the table below highlighting the common theme per cluster.\n"
    "Group subjects that provide unclear, irrelevant, or no responses into a separate \"excluded\" "
    "cluster.\n"
    "Subjects can belong to multiple clusters. Your response should be in tab-separated-values "
    "format, \n"
    "with the following columns: subject_id, cluster_ids\n"
    "\n"
    "Example output line: \n"
    "subject_id  cluster_ids\n"
    "C-002   \"C2,C3\"\n"
    "\n";
inline constexpr std::string_view kDiscoveredDefine =
    "Start your response by defining each cluster in tab-separated-values format, with columns: \n"
    "cluster_id, cluster_name, cluster_description\n"
    "\n";

inline std::string render_answer_table(const AggregatedQuestion& aq,
                                       const corpus::Question& question) {
    std::string table = "subject_id\t" + question.text + "\n";
    for (const auto& row : aq.rows) table += row.subject.value + "\t" + row.answer + "\n";
    return table;
}

inline std::string build_cluster_prompt(const AggregatedQuestion& aq,
                                        const corpus::Question& question) {
    std::string prompt;
    if (question.expert_guided()) {
        prompt.append(kExpertTemplateHead);
        prompt += question.expert_clusters_display;
        prompt.append(kExpertTemplateTail);
        prompt.append(kExpertTemplateDefine);
    } else {
        prompt.append(kDiscoveredHead);
        prompt.append(kDiscoveredDefine);
    }
    prompt.append(kPromptFooter);
    prompt += render_answer_table(aq, question);
    return prompt;
}

/// Re-clustering swaps every cluster-creation instruction for a frozen
/// definitions block after the data table; assignments come back as
/// subject_id plus a flat cluster_ids list in both modes.
inline std::string build_recluster_prompt(const AggregatedQuestion& aq,
                                          const corpus::Question& question,
                                          const ClusterSchemaResult& defs) {
    std::string prompt;
    prompt.append(kDiscoveredHead);
    prompt.append(kPromptFooter);
    prompt += render_answer_table(aq, question);
    prompt += "\nUse the following cluster definitions (Do not repeat this in output):\n";
    prompt += "cluster_id\tcluster_name\tcluster_description\n";
    for (const auto& d : defs.defs)
        prompt += d.cluster_id + "\t" + d.name + "\t" + d.description + "\n";
    return prompt;
}

// ---------------------------------------------------------------------------
// response parsing

namespace detail {

inline bool is_defs_header(const std::vector<std::string>& cells) {
    return !cells.empty() && to_lower(trim(cells[0])) == "cluster_id";
}
inline bool is_assignments_header(const std::vector<std::string>& cells) {
    return !cells.empty() && to_lower(trim(cells[0])) == "subject_id";
}

/// True for tokens like "C1"; anything with a dot is a secondary id.
inline bool is_primary_id(const std::string& id) { return id.find('.') == std::string::npos; }

inline std::string parent_of(const std::string& id) { return id.substr(0, id.find('.')); }

inline Result<std::vector<std::string>, ClusterValidationFailure> parse_label_cell(
    const std::string& cell) {
    std::vector<std::string> labels;
    std::set<std::string> seen;
    for (const std::string& part : split(unquote(trim(cell)), ',')) {
        std::string label = trim(part);
        if (label.empty()) continue;
        if (label.find_first_of(" \t") != std::string::npos)
            return ClusterValidationFailure{ClusterInvalidReason::IllFormatted,
                                            "cluster id contains whitespace: " + label};
        if (!seen.insert(label).second)
            return ClusterValidationFailure{ClusterInvalidReason::IllFormatted,
                                            "duplicate cluster id in cell: " + label};
        labels.push_back(label);
    }
    std::sort(labels.begin(), labels.end());
    return labels;
}

struct RawTables {
    std::vector<std::vector<std::string>> def_rows;
    std::vector<std::vector<std::string>> assignment_rows;
    bool found_defs = false;
    bool found_assignments = false;
};

/// Locates the two tables by their header rows; preamble and inter-table
/// chatter is skipped, content inside a table is validated strictly.
inline RawTables split_tables(const std::string& text) {
    RawTables tables;
    enum class Where { Preamble, Defs, Assignments } where = Where::Preamble;
    for (const std::string& raw_line : split_lines(text)) {
        if (trim(raw_line).empty()) {
            if (where != Where::Preamble) where = Where::Preamble;
            continue;
        }
        std::vector<std::string> cells = split(raw_line, '\t');
        if (is_defs_header(cells)) {
            tables.found_defs = true;
            where = Where::Defs;
            continue;
        }
        if (is_assignments_header(cells)) {
            tables.found_assignments = true;
            where = Where::Assignments;
            continue;
        }
        switch (where) {
            case Where::Preamble: break;  // tolerated chatter
            case Where::Defs: tables.def_rows.push_back(std::move(cells)); break;
            case Where::Assignments: tables.assignment_rows.push_back(std::move(cells)); break;
        }
    }
    return tables;
}

}  // namespace detail

/// Validates the definitions table. Expert mode: primary names must be the
/// question's expert list exactly (normalized compare); secondaries hang off
/// a defined primary. Discovered mode: flat list with a catch-all bucket.
inline Result<ClusterSchemaResult, ClusterValidationFailure> parse_defs_rows(
    const std::vector<std::vector<std::string>>& rows, const corpus::Question& question) {
    using Failure = ClusterValidationFailure;
    ClusterSchemaResult result;
    result.question_index = question.index;
    result.mode = question.clustering_mode;
    std::set<std::string> ids;
    for (const auto& cells : rows) {
        if (cells.size() != 3)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "definitions row needs 3 columns, got " +
                               std::to_string(cells.size())};
        ClusterDef def;
        def.cluster_id = trim(cells[0]);
        def.name = trim(unquote(trim(cells[1])));
        def.description = trim(unquote(trim(cells[2])));
        if (def.cluster_id.empty() ||
            def.cluster_id.find_first_of(" \t") != std::string::npos)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "bad cluster_id: \"" + def.cluster_id + "\""};
        if (def.name.empty())
            return Failure{ClusterInvalidReason::IllFormatted,
                           "empty cluster_name for " + def.cluster_id};
        if (!ids.insert(def.cluster_id).second)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "duplicate cluster_id " + def.cluster_id};
        if (question.expert_guided() && !detail::is_primary_id(def.cluster_id)) {
            def.level = Level::Secondary;
            def.parent = detail::parent_of(def.cluster_id);
        }
        result.defs.push_back(std::move(def));
    }
    if (result.defs.empty())
        return Failure{ClusterInvalidReason::IllFormatted, "no cluster definitions"};

    if (question.expert_guided()) {
        for (const auto& d : result.defs) {
            if (d.level == Level::Secondary && !result.find(d.parent))
                return Failure{ClusterInvalidReason::UndefinedCluster,
                               "secondary " + d.cluster_id + " references undefined primary " +
                                   d.parent};
        }
        std::set<std::string> expected, got;
        for (const auto& name : question.expert_clusters)
            expected.insert(normalize_for_match(name));
        for (const auto* d : result.primaries()) got.insert(normalize_for_match(d->name));
        if (expected != got)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "primary cluster names do not match the required list"};
    } else {
        bool has_catch_all = false;
        for (const auto& d : result.defs) has_catch_all |= corpus::is_catch_all_name(d.name);
        if (!has_catch_all)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "definitions lack an excluded/unclear cluster"};
    }
    return result;
}

/// Validates one assignments table against defs. Accepts run-0 shapes
/// (expert: subject TAB primary TAB secondaries; discovered: subject TAB
/// labels) and the re-run shape where expert rows may fold the primary into
/// the label list.
inline Result<std::vector<ClusterAssignment>, ClusterValidationFailure> parse_assignment_rows(
    const std::vector<std::vector<std::string>>& rows, const AggregatedQuestion& aq,
    const corpus::Question& question, const ClusterSchemaResult& defs, int run_index) {
    using Failure = ClusterValidationFailure;
    std::set<SubjectId> expected = aq.subject_set();
    std::map<SubjectId, ClusterAssignment> by_subject;

    for (const auto& cells : rows) {
        if (cells.size() == 1)
            return Failure{ClusterInvalidReason::IllFormatted,
                           "assignment row has no tab delimiter: " + trim(cells[0]).substr(0, 80)};
        SubjectId subject{trim(cells[0])};
        if (!expected.count(subject))
            return Failure{ClusterInvalidReason::UnknownSubject,
                           "subject " + subject.value + " was not in the prompt"};

        std::optional<std::string> primary;
        std::vector<std::string> labels;
        if (question.expert_guided()) {
            if (cells.size() == 3) {
                primary = trim(cells[1]);
                auto parsed = detail::parse_label_cell(cells[2]);
                if (!parsed.ok()) return parsed.error();
                labels = parsed.value();
            } else if (cells.size() == 2) {
                auto parsed = detail::parse_label_cell(cells[1]);
                if (!parsed.ok()) return parsed.error();
                for (const auto& label : parsed.value()) {
                    if (detail::is_primary_id(label)) {
                        if (primary)
                            return Failure{ClusterInvalidReason::MultiplePrimaries,
                                           subject.value + " lists primaries " + *primary +
                                               " and " + label};
                        primary = label;
                    } else {
                        labels.push_back(label);
                    }
                }
                if (!primary)
                    return Failure{ClusterInvalidReason::IllFormatted,
                                   subject.value + " has no primary cluster"};
            } else {
                return Failure{ClusterInvalidReason::IllFormatted,
                               "assignment row needs 2 or 3 columns, got " +
                                   std::to_string(cells.size())};
            }
            if (primary->empty())
                return Failure{ClusterInvalidReason::IllFormatted,
                               subject.value + " has an empty primary cell"};
            const ClusterDef* pdef = defs.find(*primary);
            if (!pdef || pdef->level != Level::Primary)
                return Failure{ClusterInvalidReason::UndefinedCluster,
                               *primary + " is not a defined primary cluster"};
            for (const auto& label : labels) {
                const ClusterDef* sdef = defs.find(label);
                if (!sdef || sdef->level != Level::Secondary)
                    return Failure{ClusterInvalidReason::UndefinedCluster,
                                   label + " is not a defined secondary cluster"};
                if (sdef->parent != *primary)
                    return Failure{ClusterInvalidReason::UndefinedCluster,
                                   label + " does not belong to primary " + *primary};
            }
            bool catch_all = corpus::is_catch_all_name(pdef->name);
            if (labels.empty() && !catch_all && defs.has_secondaries_under(*primary))
                return Failure{ClusterInvalidReason::IllFormatted,
                               subject.value + " has no secondary clusters under " + *primary};
        } else {
            if (cells.size() != 2)
                return Failure{ClusterInvalidReason::IllFormatted,
                               "assignment row needs 2 columns, got " +
                                   std::to_string(cells.size())};
            auto parsed = detail::parse_label_cell(cells[1]);
            if (!parsed.ok()) return parsed.error();
            labels = parsed.value();
            if (labels.empty())
                return Failure{ClusterInvalidReason::IllFormatted,
                               subject.value + " has no cluster labels"};
            for (const auto& label : labels)
                if (!defs.find(label))
                    return Failure{ClusterInvalidReason::UndefinedCluster,
                                   label + " is not a defined cluster"};
        }

        if (by_subject.count(subject)) {
            if (question.expert_guided())
                return Failure{ClusterInvalidReason::MultiplePrimaries,
                               subject.value + " is assigned more than once"};
            return Failure{ClusterInvalidReason::IllFormatted,
                           subject.value + " is assigned more than once"};
        }
        ClusterAssignment assignment;
        assignment.subject = subject;
        assignment.question_index = question.index;
        assignment.primary = primary;
        assignment.labels = std::move(labels);
        assignment.run_index = run_index;
        by_subject.emplace(subject, std::move(assignment));
    }

    if (by_subject.size() != expected.size()) {
        std::vector<std::string> missing;
        for (const auto& s : expected)
            if (!by_subject.count(s)) missing.push_back(s.value);
        return Failure{ClusterInvalidReason::MissingSubjects,
                       "no assignment for: " + join(missing, ",")};
    }
    std::vector<ClusterAssignment> out;
    out.reserve(by_subject.size());
    for (auto& [_, a] : by_subject) out.push_back(std::move(a));
    return out;
}

struct ClusterResponse {
    ClusterSchemaResult defs;
    std::vector<ClusterAssignment> assignments;
};

/// Run-0 parse: both tables required, defs first by contract but located by
/// header so preamble chatter does not force a retry.
inline Result<ClusterResponse, ClusterValidationFailure> parse_cluster_response(
    const std::string& text, const AggregatedQuestion& aq, const corpus::Question& question) {
    detail::RawTables tables = detail::split_tables(text);
    if (!tables.found_defs)
        return ClusterValidationFailure{ClusterInvalidReason::IllFormatted,
                                        "no cluster-definitions table found"};
    if (!tables.found_assignments)
        return ClusterValidationFailure{ClusterInvalidReason::IllFormatted,
                                        "no cluster-assignments table found"};
    auto defs = parse_defs_rows(tables.def_rows, question);
    if (!defs.ok()) return defs.error();
    auto assignments =
        parse_assignment_rows(tables.assignment_rows, aq, question, defs.value(), 0);
    if (!assignments.ok()) return assignments.error();
    return ClusterResponse{std::move(defs).value(), std::move(assignments).value()};
}

/// Re-run parse: assignments against frozen defs. A repeated definitions
/// table (prompt violation) is skipped, not an error.
inline Result<std::vector<ClusterAssignment>, ClusterValidationFailure> parse_recluster_response(
    const std::string& text, const AggregatedQuestion& aq, const corpus::Question& question,
    const ClusterSchemaResult& defs, int run_index) {
    detail::RawTables tables = detail::split_tables(text);
    if (!tables.found_assignments)
        return ClusterValidationFailure{ClusterInvalidReason::IllFormatted,
                                        "no cluster-assignments table found"};
    return parse_assignment_rows(tables.assignment_rows, aq, question, defs, run_index);
}

// ---------------------------------------------------------------------------
// stage driver

struct ClusterRunStats {
    int question_index = 0;
    int attempts = 0;
    std::vector<ClusterInvalidReason> invalid_reasons;
    bool failed = false;
    std::string failure_note;
};

struct ClusterOptions {
    int attempt_cap = 10;
    double temperature = 1.0;
    int max_output_tokens = 4096;
    int workers = 1;
};

inline std::string cluster_tag(int question_index) {
    return "cluster/q" + std::to_string(question_index);
}

struct ClusterQuestionResult {
    ClusterResponse response;
    ClusterRunStats stats;
};

inline ClusterQuestionResult cluster_question(const AggregatedQuestion& aq,
                                              const corpus::Question& question,
                                              llm::LlmClient& client,
                                              const ClusterOptions& options) {
    ClusterQuestionResult result;
    result.stats.question_index = question.index;
    llm::CompletionRequest request;
    request.prompt = build_cluster_prompt(aq, question);
    request.temperature = options.temperature;
    request.max_output_tokens = options.max_output_tokens;
    request.tag = cluster_tag(question.index);

    for (int attempt = 1; attempt <= options.attempt_cap; ++attempt) {
        result.stats.attempts = attempt;
        auto completion = client.complete(request);
        if (!completion.ok()) {
            result.stats.failed = true;
            result.stats.failure_note = completion.error().message;
            return result;
        }
        auto parsed = parse_cluster_response(completion.value().text, aq, question);
        if (!parsed.ok()) {
            result.stats.invalid_reasons.push_back(parsed.error().reason);
            continue;
        }
        result.response = std::move(parsed).value();
        return result;
    }
    result.stats.failed = true;
    result.stats.failure_note =
        "attempt cap (" + std::to_string(options.attempt_cap) + ") exhausted";
    return result;
}

struct ClusterOutcome {
    std::vector<ClusterQuestionResult> results;  // sorted by question_index
    int total_calls = 0;
    double extra_call_ratio = 0.0;
    std::vector<int> failed_questions;
};

inline ClusterOutcome cluster_all(const std::vector<AggregatedQuestion>& aggregated,
                                  const corpus::QuestionSchema& schema, llm::LlmClient& client,
                                  const ClusterOptions& options) {
    ClusterOutcome outcome;
    std::mutex sink;
    parallel_for(aggregated.size(), options.workers, [&](size_t i) {
        const AggregatedQuestion& aq = aggregated[i];
        ClusterQuestionResult result =
            cluster_question(aq, schema.at(aq.question_index), client, options);
        std::lock_guard lock(sink);
        outcome.results.push_back(std::move(result));
    });
    std::sort(outcome.results.begin(), outcome.results.end(), [](const auto& a, const auto& b) {
        return a.stats.question_index < b.stats.question_index;
    });
    for (const auto& r : outcome.results) {
        outcome.total_calls += r.stats.attempts;
        if (r.stats.failed) outcome.failed_questions.push_back(r.stats.question_index);
    }
    if (!outcome.results.empty())
        outcome.extra_call_ratio =
            static_cast<double>(outcome.total_calls - outcome.results.size()) /
            static_cast<double>(outcome.results.size());
    return outcome;
}

}  // namespace racer::cluster
