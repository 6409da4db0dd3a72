#pragma once

#include <algorithm>
#include <cassert>
#include <charconv>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "racer/cluster.hpp"
#include "racer/common.hpp"
#include "racer/corpus.hpp"
#include "racer/llm.hpp"
#include "racer/workers.hpp"

namespace racer::vote {

using cluster::AggregatedQuestion;
using cluster::ClusterAssignment;
using cluster::ClusterOptions;
using cluster::ClusterRunStats;
using cluster::ClusterSchemaResult;

// Smallest vote count only one cluster can reach: ceil((runs + 1) / 2).
inline int vote_threshold(int runs) { return (runs + 2) / 2; }

// Majority-voted subject/question pair. `confidence` is the winning vote count and is
// absent exactly when the pair is unassigned. `primary` is only ever set for questions
// clustered with an expert list; flat-clustered pairs carry their result in `labels`.
struct RobustAssignment {
    SubjectId subject;
    int question_index = 0;
    std::optional<std::string> primary;
    std::optional<int> confidence;
    std::map<std::string, int> labels;  // labels that reached threshold, with vote counts
    int runs_used = 0;

    bool assigned() const { return confidence.has_value(); }
};

// Votes each subject's per-run assignments into one RobustAssignment. Every run must
// cover the same subject set; response validation upstream guarantees that for runs
// that reached this point.
inline std::vector<RobustAssignment> majority_vote(
    const std::vector<std::vector<ClusterAssignment>>& runs) {
    if (runs.empty()) throw std::invalid_argument("majority_vote: no runs given");
    const int n = static_cast<int>(runs.size());
    const int threshold = vote_threshold(n);

    std::map<SubjectId, std::vector<const ClusterAssignment*>> by_subject;
    for (const auto& run : runs)
        for (const auto& a : run) by_subject[a.subject].push_back(&a);

    std::vector<RobustAssignment> robust;
    robust.reserve(by_subject.size());
    for (const auto& [subject, votes] : by_subject) {
        if (static_cast<int>(votes.size()) != n)
            throw std::invalid_argument("majority_vote: runs disagree on the subject set near " +
                                        subject.value);
        RobustAssignment r;
        r.subject = subject;
        r.question_index = votes.front()->question_index;
        r.runs_used = n;

        std::map<std::string, int> primary_votes;
        std::map<std::string, int> label_votes;
        for (const ClusterAssignment* a : votes) {
            if (a->primary.has_value()) ++primary_votes[*a->primary];
            for (const std::string& label : a->labels) ++label_votes[label];
        }
        for (const auto& [id, count] : label_votes)
            if (count >= threshold) r.labels.emplace(id, count);

        if (!primary_votes.empty()) {
            int winners = 0;
            for (const auto& [id, count] : primary_votes) {
                if (count < threshold) continue;
                ++winners;
                r.primary = id;
                r.confidence = count;
            }
            // A label can only be voted alongside its parent primary, so an unassigned
            // primary implies no label reached threshold either.
            assert(winners <= 1 && "two primaries cannot both reach a strict majority");
        } else if (!r.labels.empty()) {
            int best = 0;
            for (const auto& [id, count] : r.labels) best = std::max(best, count);
            r.confidence = best;
        }
        robust.push_back(std::move(r));
    }
    return robust;
}

// Partition of voted pairs by confidence; key 0 holds the unassigned ones.
struct RobustnessStats {
    int total_pairs = 0;
    int fully_robust_count = 0;  // confidence == runs_used, with at least 3 runs
    int unassigned_count = 0;
    std::map<int, std::map<int, int>> per_question;  // question -> confidence -> pairs

    double fully_robust_percent() const {
        return total_pairs == 0 ? 0.0 : 100.0 * fully_robust_count / total_pairs;
    }
    double unassigned_percent() const {
        return total_pairs == 0 ? 0.0 : 100.0 * unassigned_count / total_pairs;
    }
};

inline RobustnessStats robustness_stats(const std::vector<RobustAssignment>& robust) {
    RobustnessStats stats;
    stats.total_pairs = static_cast<int>(robust.size());
    for (const auto& r : robust) {
        ++stats.per_question[r.question_index][r.confidence.value_or(0)];
        if (!r.assigned()) {
            ++stats.unassigned_count;
        } else if (*r.confidence == r.runs_used && r.runs_used >= 3) {
            ++stats.fully_robust_count;
        }
    }
    return stats;
}

inline std::string recluster_tag(int question_index, int run_index) {
    return "recluster/q" + std::to_string(question_index) + "/run" + std::to_string(run_index);
}

struct ReclusterRun {
    int run_index = 0;  // 1-based; run 0 is the clustering stage's own assignment set
    std::vector<ClusterAssignment> assignments;
    ClusterRunStats stats;
};

struct ReclusterOutcome {
    std::vector<ReclusterRun> runs;  // ordered by run_index
    int total_calls = 0;
    std::vector<int> failed_runs;
};

// One re-clustering run against frozen definitions, retried on invalid output up to
// the attempt cap. Transport errors fail the run immediately.
inline ReclusterRun recluster_run(const AggregatedQuestion& aq, const corpus::Question& question,
                                  const ClusterSchemaResult& defs, int run_index,
                                  llm::LlmClient& client, const ClusterOptions& options) {
    ReclusterRun run;
    run.run_index = run_index;
    run.stats.question_index = question.index;
    llm::CompletionRequest request;
    request.prompt = cluster::build_recluster_prompt(aq, question, defs);
    request.temperature = options.temperature;
    request.max_output_tokens = options.max_output_tokens;
    request.tag = recluster_tag(question.index, run_index);

    for (int attempt = 1; attempt <= options.attempt_cap; ++attempt) {
        run.stats.attempts = attempt;
        auto completion = client.complete(request);
        if (!completion.ok()) {
            run.stats.failed = true;
            run.stats.failure_note = completion.error().message;
            return run;
        }
        auto parsed = cluster::parse_recluster_response(completion.value().text, aq, question,
                                                        defs, run_index);
        if (!parsed.ok()) {
            run.stats.invalid_reasons.push_back(parsed.error().reason);
            continue;
        }
        run.assignments = std::move(parsed).value();
        return run;
    }
    run.stats.failed = true;
    run.stats.failure_note =
        "attempt cap (" + std::to_string(options.attempt_cap) + ") exhausted";
    return run;
}

// Runs 1..repetitions independently; a bad response in one run never re-triggers another.
inline ReclusterOutcome recluster(const AggregatedQuestion& aq, const corpus::Question& question,
                                  const ClusterSchemaResult& defs, llm::LlmClient& client,
                                  const ClusterOptions& options, int repetitions = 4) {
    ReclusterOutcome outcome;
    std::mutex sink;
    parallel_for(static_cast<size_t>(std::max(repetitions, 0)), options.workers, [&](size_t i) {
        ReclusterRun run =
            recluster_run(aq, question, defs, static_cast<int>(i) + 1, client, options);
        std::lock_guard lock(sink);
        outcome.runs.push_back(std::move(run));
    });
    std::sort(outcome.runs.begin(), outcome.runs.end(),
              [](const ReclusterRun& a, const ReclusterRun& b) {
                  return a.run_index < b.run_index;
              });
    for (const auto& r : outcome.runs) {
        outcome.total_calls += r.stats.attempts;
        if (r.stats.failed) outcome.failed_runs.push_back(r.run_index);
    }
    return outcome;
}

// Robust-assignments TSV. Unassigned pairs write "unassigned" in the primary column and
// leave confidence empty; flat-clustered pairs leave primary empty. Rows sort by
// (question_index, subject_id) so the artifact is reproducible byte for byte.
inline std::string render_robust_tsv(std::vector<RobustAssignment> robust) {
    std::sort(robust.begin(), robust.end(),
              [](const RobustAssignment& a, const RobustAssignment& b) {
                  return std::tie(a.question_index, a.subject) <
                         std::tie(b.question_index, b.subject);
              });
    std::string out = "subject_id\tquestion_index\tprimary\tconfidence\tlabels\n";
    for (const auto& r : robust) {
        out += r.subject.value;
        out += '\t';
        out += std::to_string(r.question_index);
        out += '\t';
        if (r.assigned()) {
            if (r.primary.has_value()) out += *r.primary;
        } else {
            out += "unassigned";
        }
        out += '\t';
        if (r.assigned()) out += std::to_string(*r.confidence);
        out += '\t';
        bool first = true;
        for (const auto& [id, count] : r.labels) {
            if (!first) out += ',';
            first = false;
            out += id + ":" + std::to_string(count);
        }
        out += '\n';
    }
    return out;
}

inline std::vector<RobustAssignment> parse_robust_tsv(const std::string& text, int runs_used) {
    std::vector<RobustAssignment> robust;
    bool first_content = true;
    for (const std::string& line : split_lines(text)) {
        if (trim(line).empty()) continue;
        auto cells = split(line, '\t');
        if (first_content && !cells.empty() && cells[0] == "subject_id") {
            first_content = false;
            continue;
        }
        first_content = false;
        if (cells.size() != 5)
            throw std::runtime_error("robust TSV row needs 5 columns: " + line);
        RobustAssignment r;
        r.subject = SubjectId{trim(cells[0])};
        r.runs_used = runs_used;
        const std::string qcell = trim(cells[1]);
        auto [qp, qe] = std::from_chars(qcell.data(), qcell.data() + qcell.size(),
                                        r.question_index);
        if (qe != std::errc() || qp != qcell.data() + qcell.size())
            throw std::runtime_error("robust TSV row has a bad question index: " + line);
        const std::string primary = trim(cells[2]);
        const std::string confidence = trim(cells[3]);
        if (!confidence.empty()) {
            int value = 0;
            auto [cp, ce] =
                std::from_chars(confidence.data(), confidence.data() + confidence.size(), value);
            if (ce != std::errc() || cp != confidence.data() + confidence.size())
                throw std::runtime_error("robust TSV row has a bad confidence: " + line);
            r.confidence = value;
            if (!primary.empty()) r.primary = primary;
        } else if (primary != "unassigned") {
            throw std::runtime_error("robust TSV row lacks both confidence and the unassigned "
                                     "marker: " + line);
        }
        for (const std::string& part : split(trim(cells[4]), ',')) {
            if (trim(part).empty()) continue;
            auto colon = part.rfind(':');
            if (colon == std::string::npos)
                throw std::runtime_error("robust TSV label cell needs id:count pairs: " + line);
            int count = 0;
            const std::string count_text = trim(part.substr(colon + 1));
            auto [lp, le] =
                std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
            if (le != std::errc() || lp != count_text.data() + count_text.size())
                throw std::runtime_error("robust TSV label cell has a bad count: " + line);
            r.labels.emplace(trim(part.substr(0, colon)), count);
        }
        robust.push_back(std::move(r));
    }
    return robust;
}

}  // namespace racer::vote
