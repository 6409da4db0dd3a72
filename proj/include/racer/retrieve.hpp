#pragma once

#include <charconv>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "racer/common.hpp"
#include "racer/corpus.hpp"
#include "racer/llm.hpp"
#include "racer/workers.hpp"

namespace racer::retrieve {

enum class Verification { Exact, Normalized, Unverified };

inline std::string to_string(Verification v) {
    switch (v) {
        case Verification::Exact: return "exact";
        case Verification::Normalized: return "normalized";
        case Verification::Unverified: return "unverified";
    }
    return "unverified";
}

inline Verification verification_from_string(const std::string& s) {
    if (s == "exact") return Verification::Exact;
    if (s == "normalized") return Verification::Normalized;
    if (s == "unverified") return Verification::Unverified;
    throw std::runtime_error("unknown verification level: " + s);
}

struct RetrievedAnswer {
    SubjectId subject;
    int question_index = 0;
    std::string answer;
    std::string evidence;
    Verification evidence_verified = Verification::Unverified;
};

enum class InvalidReason { IllFormatted, WrongRowCount, IncompleteColumns, MissingAnswerOrEvidence };

inline std::string to_string(InvalidReason r) {
    switch (r) {
        case InvalidReason::IllFormatted: return "ill-formatted";
        case InvalidReason::WrongRowCount: return "wrong-row-count";
        case InvalidReason::IncompleteColumns: return "incomplete-columns";
        case InvalidReason::MissingAnswerOrEvidence: return "missing-answer-or-evidence";
    }
    return "ill-formatted";
}

struct ValidationFailure {
    InvalidReason reason;
    std::string detail;
};

struct RetrievalRunStats {
    SubjectId subject;
    int attempts = 0;  // LLM calls made for this subject
    std::vector<InvalidReason> invalid_reasons;
    bool failed = false;        // attempt cap exhausted or transport failure
    std::string failure_note;   // empty unless failed
};

// ---------------------------------------------------------------------------
// prompt

inline constexpr std::string_view kRetrievalInstructions =
    "Extract each subject's response to every question below from the interview transcript.\n"
    "Your response must be in tab-separated-values format, with the following columns:\n"
    "question_index\tanswer\tevidence\n"
    "Provide exactly one row per question, in the order given, using the question_index shown.\n"
    "The answer column is a concise answer to the question based only on the transcript.\n"
    "The evidence column must quote text verbatim from the transcript that supports the answer.\n"
    "Both columns must be non-empty for every row; if the transcript does not address a\n"
    "question, answer \"No response\" and quote the closest relevant exchange.\n";

/// Instruction header, the applicable question list with per-question format
/// notes, then the whole transcript. Pure function of its inputs.
inline std::string build_retrieval_prompt(const corpus::QuestionSchema& schema,
                                          const corpus::SubjectProfile& profile,
                                          const corpus::Transcript& transcript) {
    std::string prompt(kRetrievalInstructions);
    prompt += "\nQuestions:\n";
    for (const auto& q : corpus::applicable_questions(schema, profile)) {
        prompt += std::to_string(q.index) + "\t" + q.text;
        if (!q.response_format.empty()) prompt += " [Response format: " + q.response_format + "]";
        prompt += "\n";
    }
    prompt += "\nTranscript:\n";
    prompt += transcript.raw_text;
    return prompt;
}

// ---------------------------------------------------------------------------
// response parsing

/// One row per expected question, tab-separated, three columns, nothing
/// empty. Any deviation is a validation failure value for the retry loop.
inline Result<std::vector<RetrievedAnswer>, ValidationFailure> parse_retrieval_response(
    const std::string& text, const SubjectId& subject,
    const std::vector<corpus::Question>& expected_questions) {
    std::map<int, RetrievedAnswer> by_index;
    std::set<int> expected;
    for (const auto& q : expected_questions) expected.insert(q.index);

    bool first_content_line = true;
    for (const std::string& raw_line : split_lines(text)) {
        if (trim(raw_line).empty()) continue;
        // split the raw line: a trailing empty cell is a real (empty) column
        std::vector<std::string> cells = split(raw_line, '\t');
        if (first_content_line) {
            first_content_line = false;
            if (to_lower(trim(cells[0])) == "question_index") continue;
        }
        if (cells.size() == 1)
            return ValidationFailure{InvalidReason::IllFormatted,
                                     "row has no tab delimiter: " + trim(raw_line).substr(0, 80)};
        if (cells.size() != 3)
            return ValidationFailure{InvalidReason::IncompleteColumns,
                                     "expected 3 columns, got " + std::to_string(cells.size())};
        std::string index_cell = trim(cells[0]);
        int index = 0;
        auto [ptr, ec] = std::from_chars(index_cell.data(), index_cell.data() + index_cell.size(),
                                         index);
        if (ec != std::errc{} || ptr != index_cell.data() + index_cell.size())
            return ValidationFailure{InvalidReason::IllFormatted,
                                     "question_index is not an integer: " + index_cell};
        if (!expected.count(index))
            return ValidationFailure{InvalidReason::WrongRowCount,
                                     "unexpected question_index " + std::to_string(index)};
        if (by_index.count(index))
            return ValidationFailure{InvalidReason::WrongRowCount,
                                     "duplicate row for question_index " + std::to_string(index)};
        RetrievedAnswer answer;
        answer.subject = subject;
        answer.question_index = index;
        answer.answer = trim(unquote(trim(cells[1])));
        answer.evidence = trim(unquote(trim(cells[2])));
        if (answer.answer.empty() || answer.evidence.empty())
            return ValidationFailure{InvalidReason::MissingAnswerOrEvidence,
                                     "empty answer or evidence for question_index " +
                                         std::to_string(index)};
        by_index.emplace(index, std::move(answer));
    }
    if (by_index.size() != expected.size()) {
        std::vector<std::string> missing;
        for (int idx : expected)
            if (!by_index.count(idx)) missing.push_back(std::to_string(idx));
        return ValidationFailure{InvalidReason::WrongRowCount,
                                 "missing rows for question_index " + join(missing, ",")};
    }
    std::vector<RetrievedAnswer> out;
    out.reserve(by_index.size());
    for (auto& [_, answer] : by_index) out.push_back(std::move(answer));
    return out;
}

// ---------------------------------------------------------------------------
// evidence verification

/// Exact beats normalized beats unverified; normalization collapses
/// whitespace and folds case and curly punctuation, nothing stronger.
inline Verification verify_evidence(const std::string& evidence,
                                    const corpus::Transcript& transcript) {
    if (!evidence.empty() && transcript.raw_text.find(evidence) != std::string::npos)
        return Verification::Exact;
    std::string needle = normalize_for_match(evidence);
    if (!needle.empty() &&
        normalize_for_match(transcript.raw_text).find(needle) != std::string::npos)
        return Verification::Normalized;
    return Verification::Unverified;
}

// ---------------------------------------------------------------------------
// stage driver

struct RetrieveOptions {
    int attempt_cap = 10;
    double temperature = 1.0;
    int max_output_tokens = 2048;
    int workers = 1;
};

struct RetrievalOutcome {
    std::vector<RetrievedAnswer> answers;       // sorted by subject, question
    std::vector<RetrievalRunStats> stats;       // sorted by subject
    int total_calls = 0;
    double extra_call_ratio = 0.0;              // (calls - subjects) / subjects
    std::vector<SubjectId> failed_subjects;     // sorted
};

inline std::string retrieval_tag(const SubjectId& subject) { return "retrieve/" + subject.value; }

/// Runs one subject to completion: call, validate, re-ask on invalid output
/// until the cap. Transport failures after the client's own retries fail the
/// subject outright.
inline RetrievalRunStats retrieve_subject(const corpus::Corpus& corpus,
                                          const corpus::SubjectProfile& profile,
                                          llm::LlmClient& client, const RetrieveOptions& options,
                                          std::vector<RetrievedAnswer>& answers_out) {
    RetrievalRunStats stats;
    stats.subject = profile.subject;
    const corpus::Transcript& transcript = corpus.transcript(profile.subject);
    std::vector<corpus::Question> expected = corpus::applicable_questions(corpus.schema, profile);
    llm::CompletionRequest request;
    request.prompt = build_retrieval_prompt(corpus.schema, profile, transcript);
    request.temperature = options.temperature;
    request.max_output_tokens = options.max_output_tokens;
    request.tag = retrieval_tag(profile.subject);

    for (int attempt = 1; attempt <= options.attempt_cap; ++attempt) {
        stats.attempts = attempt;
        auto completion = client.complete(request);
        if (!completion.ok()) {
            stats.failed = true;
            stats.failure_note = completion.error().message;
            return stats;
        }
        auto parsed = parse_retrieval_response(completion.value().text, profile.subject, expected);
        if (!parsed.ok()) {
            stats.invalid_reasons.push_back(parsed.error().reason);
            continue;
        }
        for (RetrievedAnswer& answer : std::move(parsed).value()) {
            answer.evidence_verified = verify_evidence(answer.evidence, transcript);
            answers_out.push_back(std::move(answer));
        }
        return stats;
    }
    stats.failed = true;
    stats.failure_note = "attempt cap (" + std::to_string(options.attempt_cap) + ") exhausted";
    return stats;
}

inline RetrievalOutcome retrieve_all(const corpus::Corpus& corpus, llm::LlmClient& client,
                                     const RetrieveOptions& options) {
    RetrievalOutcome outcome;
    std::mutex sink;
    parallel_for(corpus.profiles.size(), options.workers, [&](size_t i) {
        std::vector<RetrievedAnswer> answers;
        RetrievalRunStats stats =
            retrieve_subject(corpus, corpus.profiles[i], client, options, answers);
        std::lock_guard lock(sink);
        for (auto& a : answers) outcome.answers.push_back(std::move(a));
        outcome.stats.push_back(std::move(stats));
    });
    std::sort(outcome.answers.begin(), outcome.answers.end(), [](const auto& a, const auto& b) {
        return std::tie(a.subject, a.question_index) < std::tie(b.subject, b.question_index);
    });
    std::sort(outcome.stats.begin(), outcome.stats.end(),
              [](const auto& a, const auto& b) { return a.subject < b.subject; });
    for (const auto& s : outcome.stats) {
        outcome.total_calls += s.attempts;
        if (s.failed) outcome.failed_subjects.push_back(s.subject);
    }
    if (!outcome.stats.empty())
        outcome.extra_call_ratio =
            static_cast<double>(outcome.total_calls - outcome.stats.size()) /
            static_cast<double>(outcome.stats.size());
    return outcome;
}

}  // namespace racer::retrieve
