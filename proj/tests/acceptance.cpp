// Acceptance gate: one pass/fail line per criterion, nonzero exit on any failure.
// Criteria 1-5 exercise the library in process; 6-8 drive the installed CLI binary
// over the bundled smoke corpus.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "racer/cluster.hpp"
#include "racer/corpus.hpp"
#include "racer/llm.hpp"
#include "racer/retrieve.hpp"
#include "racer/stats.hpp"
#include "racer/vote.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace racer;

namespace {

struct Criterion {
    int number = 0;
    std::string title;
    long checks = 0;
    long failures = 0;
    std::vector<std::string> notes;

    void expect(bool ok, const std::string& what) {
        ++checks;
        if (ok) return;
        ++failures;
        if (notes.size() < 8) notes.push_back(what);
    }
};

fs::path source_dir() { return fs::path(RACER_SOURCE_DIR); }

llm::LlmClientOptions quiet_options() {
    llm::LlmClientOptions opts;
    opts.sleeper = [](std::chrono::milliseconds) {};
    return opts;
}

llm::LlmClient scripted_client(llm::BackendScript script) {
    return llm::LlmClient(std::make_shared<llm::ScriptedBackend>(std::move(script)),
                          quiet_options());
}

int run_cli(const std::string& args) {
    std::string cmd = std::string("\"") + RACER_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc == -1 || !WIFEXITED(rc)) return -1;
    return WEXITSTATUS(rc);
}

std::string subject_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S-%03d", i);
    return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: voting matches a brute-force oracle

void criterion_vote_oracle(Criterion& c) {
    const std::vector<std::string> ids{"C1", "C2", "C3"};
    for (int code = 0; code < 243; ++code) {
        int x = code;
        std::vector<std::vector<cluster::ClusterAssignment>> runs(5);
        std::array<int, 3> counts{};
        for (int r = 0; r < 5; ++r) {
            int pick = x % 3;
            x /= 3;
            ++counts[static_cast<size_t>(pick)];
            cluster::ClusterAssignment a;
            a.subject = SubjectId{"S-001"};
            a.question_index = 0;
            a.primary = ids[static_cast<size_t>(pick)];
            a.run_index = r;
            runs[static_cast<size_t>(r)].push_back(a);
        }
        int winner = -1;
        for (int k = 0; k < 3; ++k)
            if (counts[static_cast<size_t>(k)] >= 3) winner = k;
        auto robust = vote::majority_vote(runs);
        const std::string tag = "sequence " + std::to_string(code);
        c.expect(robust.size() == 1, tag + ": one subject expected");
        if (robust.size() != 1) continue;
        const auto& r = robust.front();
        c.expect(r.runs_used == 5 && r.labels.empty(), tag + ": runs_used/labels");
        if (winner < 0) {
            c.expect(!r.assigned() && !r.primary.has_value(), tag + ": expected unassigned");
        } else {
            c.expect(r.assigned() && r.primary == ids[static_cast<size_t>(winner)] &&
                         *r.confidence == counts[static_cast<size_t>(winner)],
                     tag + ": wrong winner or confidence");
        }
    }

    std::mt19937 rng(910243u);
    for (int trial = 0; trial < 10000; ++trial) {
        const int n_runs = 3 + static_cast<int>(rng() % 5);
        const int universe = 1 + static_cast<int>(rng() % 6);
        const int threshold = (n_runs + 2) / 2;
        std::vector<std::vector<cluster::ClusterAssignment>> runs(
            static_cast<size_t>(n_runs));
        std::map<std::string, int> tally;
        for (int r = 0; r < n_runs; ++r) {
            std::set<std::string> chosen;
            for (int l = 0; l < universe; ++l)
                if (rng() % 2) chosen.insert("L" + std::to_string(l));
            if (chosen.empty())
                chosen.insert("L" + std::to_string(rng() % static_cast<unsigned>(universe)));
            cluster::ClusterAssignment a;
            a.subject = SubjectId{"S-001"};
            a.question_index = 0;
            a.run_index = r;
            a.labels.assign(chosen.begin(), chosen.end());
            for (const auto& l : chosen) ++tally[l];
            runs[static_cast<size_t>(r)].push_back(std::move(a));
        }
        std::map<std::string, int> expected_labels;
        int expected_confidence = 0;
        for (const auto& [label, count] : tally) {
            if (count < threshold) continue;
            expected_labels.emplace(label, count);
            expected_confidence = std::max(expected_confidence, count);
        }
        auto robust = vote::majority_vote(runs);
        const std::string tag = "random case " + std::to_string(trial);
        c.expect(robust.size() == 1, tag + ": one subject expected");
        if (robust.size() != 1) continue;
        const auto& r = robust.front();
        bool match = r.labels == expected_labels && !r.primary.has_value() &&
                     r.runs_used == n_runs &&
                     (expected_labels.empty() ? !r.assigned()
                                              : r.confidence == expected_confidence);
        c.expect(match, tag + ": vote outcome diverges from oracle");
        c.expect(r.assigned() || r.labels.empty(), tag + ": unassigned pair carries labels");
    }
}

// ---------------------------------------------------------------------------
// criterion 2: robustness summary arithmetic at reference corpus scale

void criterion_robustness_arithmetic(Criterion& c) {
    auto fixture = [](int total, int unassigned, int fully) {
        std::vector<vote::RobustAssignment> robust;
        robust.reserve(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i) {
            vote::RobustAssignment r;
            r.subject = SubjectId{subject_name(i % 500)};
            r.question_index = i / 500;
            r.runs_used = 5;
            if (i < unassigned) {
                robust.push_back(std::move(r));
                continue;
            }
            r.primary = "C1";
            r.confidence = i < unassigned + fully ? 5 : 4;
            robust.push_back(std::move(r));
        }
        return robust;
    };

    vote::RobustnessStats a = vote::robustness_stats(fixture(3342, 12, 0));
    c.expect(a.total_pairs == 3342 && a.unassigned_count == 12,
             "unassigned fixture counts off");
    c.expect(std::fabs(a.unassigned_percent() - 0.36) <= 0.1,
             "unassigned percent " + std::to_string(a.unassigned_percent()) +
                 " not within 0.1 of 0.36");

    vote::RobustnessStats b = vote::robustness_stats(fixture(2099, 0, 1852));
    c.expect(b.total_pairs == 2099 && b.fully_robust_count == 1852,
             "fully-robust fixture counts off");
    c.expect(std::fabs(b.fully_robust_percent() - 88.2) <= 0.1,
             "fully-robust percent " + std::to_string(b.fully_robust_percent()) +
                 " not within 0.1 of 88.2");
}

// ---------------------------------------------------------------------------
// criterion 3: retry accounting under injected first-attempt failures

void criterion_retry_accounting(Criterion& c) {
    corpus::Corpus corpus;
    corpus.schema = corpus::schema_from_json(json::parse(R"({
      "questions": [
        {"index": 0, "text": "Describe the workload.", "audience": "all",
         "clustering_mode": "llm-discovered-single-level"}
      ]
    })"));
    const std::set<int> failing{7, 19, 23, 47, 88};
    llm::BackendScript retrieve_script;
    for (int i = 1; i <= 93; ++i) {
        const std::string id = subject_name(i);
        const std::string spoken = "Workload answer " + std::to_string(i) + " was heavy.";
        corpus.transcripts.push_back(corpus::parse_transcript(
            SubjectId{id}, "Speaker 1: Describe the workload.\nSpeaker 2: " + spoken + "\n"));
        corpus.profiles.push_back(corpus::SubjectProfile{SubjectId{id}, false, ""});
        const std::string good = "0\tanswer " + std::to_string(i) + "\t" + spoken + "\n";
        auto& queue = retrieve_script.queues["retrieve/" + id];
        if (failing.count(i)) queue.push_back("%%% not a table");
        queue.push_back(good);
    }
    llm::LlmClient retrieve_client = scripted_client(std::move(retrieve_script));
    retrieve::RetrievalOutcome retrieved =
        retrieve::retrieve_all(corpus, retrieve_client, retrieve::RetrieveOptions{});
    c.expect(retrieved.total_calls == 98,
             "retrieval calls " + std::to_string(retrieved.total_calls) + ", want 98");
    c.expect(retrieved.extra_call_ratio == 5.0 / 93.0,
             "retrieval extra-call ratio " + std::to_string(retrieved.extra_call_ratio) +
                 ", want exactly 5/93");
    c.expect(retrieved.failed_subjects.empty(), "retrieval reported failed subjects");
    c.expect(retrieved.answers.size() == 93, "expected one answer per subject");
    for (const auto& s : retrieved.stats) {
        const int serial = std::stoi(s.subject.value.substr(2));
        const int want = failing.count(serial) ? 2 : 1;
        c.expect(s.attempts == want && !s.failed,
                 s.subject.value + ": attempts " + std::to_string(s.attempts) + ", want " +
                     std::to_string(want));
    }

    json cluster_schema_json;
    for (int q = 0; q < 40; ++q)
        cluster_schema_json["questions"].push_back(
            {{"index", q},
             {"text", "Question " + std::to_string(q) + "?"},
             {"audience", "all"},
             {"clustering_mode", "llm-discovered-single-level"}});
    corpus::QuestionSchema schema = corpus::schema_from_json(cluster_schema_json);
    std::vector<cluster::AggregatedQuestion> aggregated;
    for (int q = 0; q < 40; ++q) {
        cluster::AggregatedQuestion aq;
        aq.question_index = q;
        for (int s = 1; s <= 3; ++s)
            aq.rows.push_back({SubjectId{subject_name(s)},
                               "answer " + std::to_string(q) + "/" + std::to_string(s)});
        aggregated.push_back(std::move(aq));
    }
    const std::string good =
        "cluster_id\tcluster_name\tcluster_description\n"
        "D1\tTheme\tThe common theme.\n"
        "D2\tExcluded\tUnclear, irrelevant, or missing responses.\n"
        "\n"
        "subject_id\tcluster_ids\n"
        "S-001\tD1\n"
        "S-002\tD1\n"
        "S-003\tD2\n";
    llm::BackendScript cluster_script;
    for (int q = 0; q < 40; ++q) {
        auto& queue = cluster_script.queues["cluster/q" + std::to_string(q)];
        if (q < 20) queue.push_back("%%% not a table");
        queue.push_back(good);
    }
    llm::LlmClient cluster_client = scripted_client(std::move(cluster_script));
    cluster::ClusterOutcome clustered =
        cluster::cluster_all(aggregated, schema, cluster_client, cluster::ClusterOptions{});
    c.expect(clustered.total_calls == 60,
             "clustering calls " + std::to_string(clustered.total_calls) + ", want 60");
    c.expect(clustered.extra_call_ratio == 0.5,
             "clustering extra-call ratio " + std::to_string(clustered.extra_call_ratio) +
                 ", want exactly 0.5");
    c.expect(clustered.failed_questions.empty(), "clustering reported failed questions");
    c.expect(clustered.results.size() == 40, "expected one result per question");
    for (const auto& r : clustered.results) {
        const int want = r.stats.question_index < 20 ? 2 : 1;
        c.expect(r.stats.attempts == want && r.response.assignments.size() == 3,
                 "q" + std::to_string(r.stats.question_index) + ": attempts " +
                     std::to_string(r.stats.attempts) + ", want " + std::to_string(want));
    }
}

// ---------------------------------------------------------------------------
// criterion 4: mutated responses are all rejected with the right reason

struct ExpertFixture {
    corpus::Question question;
    cluster::AggregatedQuestion aq;
    std::vector<std::string> assignment_rows;  // one line per subject, no trailing \n
    std::string defs;
};

corpus::Question make_expert_question() {
    corpus::Question q;
    q.index = 0;
    q.text = "Did it help?";
    q.clustering_mode = corpus::ClusteringMode::ExpertGuidedTwoLevel;
    q.expert_clusters_display = "(1) Yes, (2) No, and (3) Unclear/irrelevant/no response";
    q.expert_clusters = corpus::parse_cluster_display(q.expert_clusters_display);
    return q;
}

corpus::Question make_discovered_question() {
    corpus::Question q;
    q.index = 0;
    q.text = "Describe it.";
    q.clustering_mode = corpus::ClusteringMode::LlmDiscoveredSingleLevel;
    return q;
}

ExpertFixture make_expert_fixture(std::mt19937& rng) {
    ExpertFixture f;
    f.question = make_expert_question();
    f.defs =
        "cluster_id\tcluster_name\tcluster_description\n"
        "C1\tYes\tSaid yes.\n"
        "C1.1\tBrief yes\tShort affirmations.\n"
        "C1.2\tDetailed yes\tElaborated affirmations.\n"
        "C2\tNo\tSaid no.\n"
        "C2.1\tFirm no\tClear denials.\n"
        "C3\tUnclear/irrelevant/no response\tEverything else.\n";
    const int n = 3 + static_cast<int>(rng() % 6);
    f.aq.question_index = 0;
    for (int i = 1; i <= n; ++i) {
        const std::string id = subject_name(i);
        f.aq.rows.push_back({SubjectId{id}, "answer " + std::to_string(i)});
        switch (rng() % 3) {
            case 0:
                f.assignment_rows.push_back(
                    id + "\tC1\t" + (rng() % 2 ? "C1.1" : "\"C1.1,C1.2\""));
                break;
            case 1: f.assignment_rows.push_back(id + "\tC2\tC2.1"); break;
            default: f.assignment_rows.push_back(id + "\tC3\t"); break;
        }
    }
    return f;
}

std::string expert_body(const ExpertFixture& f, const std::vector<std::string>& rows) {
    std::string body = f.defs + "\nsubject_id\ttop_level_cluster_id\tsecondary_cluster_ids\n";
    for (const auto& row : rows) body += row + "\n";
    return body;
}

ExpertFixture make_discovered_fixture(std::mt19937& rng) {
    ExpertFixture f;
    f.question = make_discovered_question();
    f.defs =
        "cluster_id\tcluster_name\tcluster_description\n"
        "D1\tPraise\tPositive remarks.\n"
        "D2\tComplaints\tNegative remarks.\n"
        "D3\tExcluded\tUnclear, irrelevant, or missing.\n";
    const int n = 3 + static_cast<int>(rng() % 6);
    f.aq.question_index = 0;
    for (int i = 1; i <= n; ++i) {
        const std::string id = subject_name(i);
        f.aq.rows.push_back({SubjectId{id}, "answer " + std::to_string(i)});
        switch (rng() % 3) {
            case 0: f.assignment_rows.push_back(id + "\tD1"); break;
            case 1: f.assignment_rows.push_back(id + "\t\"D1,D2\""); break;
            default: f.assignment_rows.push_back(id + "\tD3"); break;
        }
    }
    return f;
}

std::string discovered_body(const ExpertFixture& f, const std::vector<std::string>& rows) {
    std::string body = f.defs + "\nsubject_id\tcluster_ids\n";
    for (const auto& row : rows) body += row + "\n";
    return body;
}

void criterion_parser_strictness(Criterion& c) {
    std::mt19937 rng(47111u);
    std::map<std::string, int> class_counts;

    auto retrieval_fixture = [&rng](int n_questions, std::vector<std::string>& rows) {
        rows.clear();
        for (int i = 0; i < n_questions; ++i)
            rows.push_back(std::to_string(i) + "\tanswer " + std::to_string(i) +
                           "\tevidence " + std::to_string(i));
    };
    auto question_list = [](int n) {
        std::vector<corpus::Question> questions;
        for (int i = 0; i < n; ++i) {
            corpus::Question q;
            q.index = i;
            q.text = "Question " + std::to_string(i) + "?";
            q.clustering_mode = corpus::ClusteringMode::LlmDiscoveredSingleLevel;
            questions.push_back(std::move(q));
        }
        return questions;
    };
    auto joined = [](const std::vector<std::string>& rows) {
        std::string out;
        for (const auto& r : rows) out += r + "\n";
        return out;
    };

    for (int i = 0; i < 1000; ++i) {
        const int mutation_class = i % 5;
        const bool variant = (i / 5) % 2 == 0;
        switch (mutation_class) {
            case 0: {  // row deletion
                ++class_counts["row-deletion"];
                if (variant) {
                    const int n = 3 + static_cast<int>(rng() % 6);
                    std::vector<std::string> rows;
                    retrieval_fixture(n, rows);
                    const auto expected = question_list(n);
                    c.expect(retrieve::parse_retrieval_response(joined(rows), SubjectId{"S-001"},
                                                                expected)
                                 .ok(),
                             "row-deletion base retrieval body must parse");
                    rows.erase(rows.begin() + static_cast<long>(rng() % rows.size()));
                    auto parsed = retrieve::parse_retrieval_response(joined(rows),
                                                                     SubjectId{"S-001"}, expected);
                    c.expect(!parsed.ok() &&
                                 parsed.error().reason == retrieve::InvalidReason::WrongRowCount,
                             "case " + std::to_string(i) +
                                 ": deleted retrieval row not rejected as wrong-row-count");
                } else {
                    ExpertFixture f = make_discovered_fixture(rng);
                    c.expect(cluster::parse_cluster_response(discovered_body(f, f.assignment_rows),
                                                             f.aq, f.question)
                                 .ok(),
                             "row-deletion base cluster body must parse");
                    auto rows = f.assignment_rows;
                    rows.erase(rows.begin() + static_cast<long>(rng() % rows.size()));
                    auto parsed = cluster::parse_cluster_response(discovered_body(f, rows), f.aq,
                                                                  f.question);
                    c.expect(!parsed.ok() && parsed.error().reason ==
                                                 cluster::ClusterInvalidReason::MissingSubjects,
                             "case " + std::to_string(i) +
                                 ": deleted assignment row not rejected as missing-subjects");
                }
                break;
            }
            case 1: {  // delimiter swap, tabs to commas on one row
                ++class_counts["delimiter-swap"];
                if (variant) {
                    const int n = 3 + static_cast<int>(rng() % 6);
                    std::vector<std::string> rows;
                    retrieval_fixture(n, rows);
                    const auto expected = question_list(n);
                    std::string& row = rows[rng() % rows.size()];
                    std::replace(row.begin(), row.end(), '\t', ',');
                    auto parsed = retrieve::parse_retrieval_response(joined(rows),
                                                                     SubjectId{"S-001"}, expected);
                    c.expect(!parsed.ok() &&
                                 parsed.error().reason == retrieve::InvalidReason::IllFormatted,
                             "case " + std::to_string(i) +
                                 ": comma retrieval row not rejected as ill-formatted");
                } else {
                    ExpertFixture f = make_expert_fixture(rng);
                    auto rows = f.assignment_rows;
                    std::string& row = rows[rng() % rows.size()];
                    std::replace(row.begin(), row.end(), '\t', ',');
                    auto parsed =
                        cluster::parse_cluster_response(expert_body(f, rows), f.aq, f.question);
                    c.expect(!parsed.ok() && parsed.error().reason ==
                                                 cluster::ClusterInvalidReason::IllFormatted,
                             "case " + std::to_string(i) +
                                 ": comma assignment row not rejected as ill-formatted");
                }
                break;
            }
            case 2: {  // empty answer or evidence cell
                ++class_counts["empty-evidence"];
                const int n = 3 + static_cast<int>(rng() % 6);
                std::vector<std::string> rows;
                retrieval_fixture(n, rows);
                const auto expected = question_list(n);
                const size_t victim = rng() % rows.size();
                const std::string idx = std::to_string(victim);
                rows[victim] = variant ? idx + "\tanswer " + idx + "\t  "
                                       : idx + "\t \tevidence " + idx;
                auto parsed = retrieve::parse_retrieval_response(joined(rows), SubjectId{"S-001"},
                                                                 expected);
                c.expect(!parsed.ok() && parsed.error().reason ==
                                             retrieve::InvalidReason::MissingAnswerOrEvidence,
                         "case " + std::to_string(i) +
                             ": blank cell not rejected as missing-answer-or-evidence");
                break;
            }
            case 3: {  // unknown subject added to the assignments
                ++class_counts["unknown-subject"];
                ExpertFixture f = variant ? make_expert_fixture(rng)
                                          : make_discovered_fixture(rng);
                auto rows = f.assignment_rows;
                const std::string intruder =
                    variant ? std::string("S-999\tC1\tC1.1") : std::string("S-999\tD1");
                rows.insert(rows.begin() + static_cast<long>(rng() % (rows.size() + 1)),
                            intruder);
                const std::string body =
                    variant ? expert_body(f, rows) : discovered_body(f, rows);
                auto parsed = cluster::parse_cluster_response(body, f.aq, f.question);
                c.expect(!parsed.ok() && parsed.error().reason ==
                                             cluster::ClusterInvalidReason::UnknownSubject,
                         "case " + std::to_string(i) +
                             ": foreign subject not rejected as unknown-subject");
                break;
            }
            default: {  // duplicate primary assignment
                ++class_counts["duplicate-primaries"];
                ExpertFixture f = make_expert_fixture(rng);
                auto rows = f.assignment_rows;
                const size_t victim = rng() % rows.size();
                if (variant) {
                    rows.push_back(rows[victim]);  // subject assigned twice
                } else {
                    const std::string id = subject_name(static_cast<int>(victim) + 1);
                    rows[victim] = id + "\t\"C1,C2\"";  // two primaries in one flat cell
                }
                auto parsed =
                    cluster::parse_cluster_response(expert_body(f, rows), f.aq, f.question);
                c.expect(!parsed.ok() && parsed.error().reason ==
                                             cluster::ClusterInvalidReason::MultiplePrimaries,
                         "case " + std::to_string(i) +
                             ": duplicate primary not rejected as multiple-primaries");
                break;
            }
        }
    }
    for (const auto& [name, count] : class_counts)
        c.expect(count == 200, name + ": " + std::to_string(count) + " cases, want 200");
}

// ---------------------------------------------------------------------------
// criterion 5: agreement statistics match independent references

std::vector<std::vector<std::string>> load_rows(const std::string& name) {
    auto text = read_file(source_dir() / "tests" / "data" / name);
    std::vector<std::vector<std::string>> rows;
    bool header = true;
    for (const std::string& line : split_lines(text)) {
        if (trim(line).empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        rows.push_back(split(line, '\t'));
    }
    return rows;
}

stats::LabelSet singleton(const std::string& label) {
    stats::LabelSet set;
    set.labels.insert(label);
    return set;
}

void criterion_statistics_oracles(Criterion& c) {
    auto kappa_rows = load_rows("oracle_kappa.tsv");
    c.expect(kappa_rows.size() >= 100, "kappa reference set needs at least 100 rows");
    for (const auto& row : kappa_rows) {
        const int k = std::stoi(row[0]);
        auto counts = split(row[1], ',');
        stats::EvaluatorLabels a{"A", {}};
        stats::EvaluatorLabels b{"B", {}};
        int serial = 0;
        for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
                const int n = std::stoi(counts[static_cast<size_t>(i * k + j)]);
                for (int rep = 0; rep < n; ++rep) {
                    stats::PairKey key{SubjectId{"S-" + std::to_string(serial++)}, 0};
                    a.labels[key] = singleton("K" + std::to_string(i));
                    b.labels[key] = singleton("K" + std::to_string(j));
                }
            }
        }
        auto kappa = stats::cohens_kappa(a, b, 0);
        c.expect(kappa.has_value() && std::fabs(*kappa - std::stod(row[2])) < 1e-9,
                 "kappa diverges from reference on counts " + row[1]);
    }

    auto spearman_rows = load_rows("oracle_spearman.tsv");
    c.expect(spearman_rows.size() >= 100, "spearman reference set needs at least 100 rows");
    for (const auto& row : spearman_rows) {
        std::vector<double> x, y;
        for (const auto& cell : split(row[1], ',')) x.push_back(std::stod(cell));
        for (const auto& cell : split(row[2], ',')) y.push_back(std::stod(cell));
        auto result = stats::spearman_rho(x, y);
        const bool ok = result.rho.has_value() && result.p.has_value() &&
                        std::fabs(*result.rho - std::stod(row[3])) < 1e-9 &&
                        std::fabs(*result.p - std::stod(row[4])) < 1e-6;
        c.expect(ok, "spearman diverges from reference on x=" + row[1]);
    }

    auto chi2_rows = load_rows("oracle_chi2.tsv");
    c.expect(chi2_rows.size() >= 100, "chi-square reference set needs at least 100 rows");
    for (const auto& row : chi2_rows) {
        std::array<std::array<double, 2>, 2> table{
            {{std::stod(row[0]), std::stod(row[1])}, {std::stod(row[2]), std::stod(row[3])}}};
        auto result = stats::chi_square_yates(table);
        const bool ok = result.statistic.has_value() && result.p.has_value() &&
                        std::fabs(*result.statistic - std::stod(row[4])) < 1e-9 &&
                        std::fabs(*result.p - std::stod(row[5])) < 1e-6;
        c.expect(ok, "chi-square diverges from reference on " + row[0] + "," + row[1] + "," +
                         row[2] + "," + row[3]);
    }

    {  // spot values worked by hand
        stats::EvaluatorLabels a{"A", {}};
        stats::EvaluatorLabels b{"B", {}};
        int serial = 0;
        auto add = [&](const std::string& left, const std::string& right, int n) {
            for (int rep = 0; rep < n; ++rep) {
                stats::PairKey key{SubjectId{"S-" + std::to_string(serial++)}, 0};
                a.labels[key] = singleton(left);
                b.labels[key] = singleton(right);
            }
        };
        add("K0", "K0", 20);
        add("K0", "K1", 5);
        add("K1", "K0", 10);
        add("K1", "K1", 15);
        auto kappa = stats::cohens_kappa(a, b, 0);
        c.expect(kappa.has_value() && std::fabs(*kappa - 0.4) < 1e-9,
                 "kappa spot value [[20,5],[10,15]] must be 0.4");
        auto yates = stats::chi_square_yates({{{30.0, 10.0}, {10.0, 30.0}}});
        c.expect(yates.statistic.has_value() && std::fabs(*yates.statistic - 18.05) < 1e-9,
                 "Yates spot value [[30,10],[10,30]] must be 18.05");
    }

    std::mt19937 rng(552871u);
    auto random_set = [&rng](bool exclusive) {
        stats::LabelSet set;
        if (rng() % 8 == 0) {
            set.unassigned = true;
            return set;
        }
        if (exclusive) {
            set.labels.insert("K" + std::to_string(rng() % 4));
            return set;
        }
        for (int l = 0; l < 5; ++l)
            if (rng() % 2) set.labels.insert("L" + std::to_string(l));
        if (set.labels.empty()) set.labels.insert("L0");
        return set;
    };
    auto oracle_score = [](const stats::LabelSet& a, const stats::LabelSet& b, bool exclusive) {
        if (a.unassigned || b.unassigned) return 0;
        if (exclusive) return a.labels.size() == 1 && a.labels == b.labels ? 1 : 0;
        const auto& small = a.labels.size() <= b.labels.size() ? a.labels : b.labels;
        const auto& large = a.labels.size() <= b.labels.size() ? b.labels : a.labels;
        for (const auto& l : small)
            if (!large.count(l)) return 0;
        return 1;
    };
    const std::vector<std::string> trio{"A", "B", "C"};
    for (int trial = 0; trial < 150; ++trial) {
        const bool exclusive = rng() % 2 == 0;
        const int m = 5 + static_cast<int>(rng() % 20);
        std::vector<stats::AgreementRecord> records;
        int matched = 0;
        for (int r = 0; r < m; ++r) {
            stats::AgreementRecord record;
            record.subject = SubjectId{subject_name(r)};
            record.question_index = 0;
            record.exclusive = exclusive;
            for (const auto& id : trio) record.labels.emplace(id, random_set(exclusive));
            matched += oracle_score(record.labels.at("A"), record.labels.at("B"), exclusive);
            records.push_back(std::move(record));
        }
        auto pair_ab = stats::pairwise_concordance(records, "A", "B");
        c.expect(pair_ab.has_value() &&
                     std::fabs(*pair_ab - static_cast<double>(matched) / m) < 1e-9,
                 "grid " + std::to_string(trial) + ": pairwise concordance diverges");
        if (trial >= 100) continue;
        auto kway = stats::kway_concordance(records, trio);
        double min_pair = 1.0;
        for (size_t i = 0; i < trio.size(); ++i)
            for (size_t j = i + 1; j < trio.size(); ++j) {
                auto p = stats::pairwise_concordance(records, trio[i], trio[j]);
                if (p.has_value()) min_pair = std::min(min_pair, *p);
            }
        c.expect(kway.has_value() && *kway <= min_pair + 1e-12,
                 "grid " + std::to_string(trial) + ": k-way exceeds min pairwise");
    }
}

// ---------------------------------------------------------------------------
// smoke corpus runs shared by criteria 6 through 8

struct SmokeRuns {
    int rc_a = -1;
    int rc_b = -1;
    int rc_c = -1;
    fs::path out_a;
    fs::path out_b;
    fs::path out_c;
};

const SmokeRuns& smoke_runs() {
    static const SmokeRuns runs = [] {
        SmokeRuns r;
        const fs::path scratch = fs::temp_directory_path() / "racer_acceptance_smoke";
        fs::remove_all(scratch);
        fs::create_directories(scratch);
        const std::string config =
            (source_dir() / "data" / "smoke" / "config.json").string();
        r.out_a = scratch / "a";
        r.out_b = scratch / "b";
        r.out_c = scratch / "c";
        r.rc_a = run_cli("all --config \"" + config + "\" --output-dir \"" +
                         r.out_a.string() + "\"");
        r.rc_b = run_cli("all --config \"" + config + "\" --output-dir \"" +
                         r.out_b.string() + "\"");
        r.rc_c = run_cli("replay --config \"" + config + "\" --output-dir \"" +
                         r.out_c.string() + "\" --replay-log \"" +
                         (r.out_a / "replay_log.jsonl").string() + "\"");
        return r;
    }();
    return runs;
}

std::optional<json> read_json_file(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    return json::parse(read_file(path));
}

// ---------------------------------------------------------------------------
// criterion 6: fabricated evidence is never verified and is surfaced downstream

void criterion_evidence_guard(Criterion& c) {
    const std::string transcript_text =
        "Speaker 1: How did the sessions go?\n"
        "Speaker 2: The sessions were great and I learned to chart faster.\n"
        "Speaker 1: Anything negative?\n"
        "Speaker 2: No, not really, it confused me only once.\n"
        "Speaker 1: Would you recommend them?\n"
        "Speaker 2: Absolutely, to every new hire.\n";
    corpus::Transcript transcript =
        corpus::parse_transcript(SubjectId{"S-001"}, transcript_text);

    c.expect(retrieve::verify_evidence("The sessions were great and I learned to chart faster.",
                                       transcript) == retrieve::Verification::Exact,
             "verbatim quote must verify as exact");
    c.expect(retrieve::verify_evidence("NO, NOT REALLY, IT CONFUSED ME",
                                       transcript) == retrieve::Verification::Normalized,
             "case-folded quote must verify as normalized");

    for (int i = 0; i < 200; ++i) {
        const std::string token = "qz" + std::to_string(i);
        const std::string fabricated =
            i % 2 == 0 ? "The sessions were great and the " + token + " module dragged."
                       : "Fabricated remark " + token + " that was never spoken aloud.";
        c.expect(retrieve::verify_evidence(fabricated, transcript) ==
                     retrieve::Verification::Unverified,
                 "fabricated case " + std::to_string(i) + " was accepted as verified");
    }

    const SmokeRuns& runs = smoke_runs();
    c.expect(runs.rc_a == 0, "smoke run must exit 0 before checking its outputs");
    auto stats_json = read_json_file(runs.out_a / "retrieve" / "stats.json");
    c.expect(stats_json.has_value(), "retrieve stats missing from smoke run");
    if (stats_json) {
        const json& evidence = stats_json->at("evidence");
        c.expect(evidence.at("unverified").get<int>() == 1,
                 "smoke run must flag exactly one unverified quote in stage output");
        const json& pairs = evidence.at("unverified_pairs");
        c.expect(pairs.size() == 1 && pairs[0].at("subject_id") == "S-005" &&
                     pairs[0].at("question_index").get<int>() == 5,
                 "unverified pair must be S-005 question 5");
    }
    auto corpus_json = read_json_file(runs.out_a / "report" / "corpus.json");
    c.expect(corpus_json.has_value(), "report corpus.json missing from smoke run");
    if (corpus_json) {
        const json& evidence = corpus_json->at("evidence");
        c.expect(evidence.at("unverified").get<int>() == 1 &&
                     evidence.at("unverified_pairs").size() == 1,
                 "unverified quote must surface in the corpus summary");
    }
    const fs::path tsv = runs.out_a / "retrieve" / "S-005.tsv";
    c.expect(fs::exists(tsv), "S-005 retrieval table missing from smoke run");
    if (fs::exists(tsv)) {
        bool found = false;
        for (const std::string& line : split_lines(read_file(tsv))) {
            auto cells = split(line, '\t');
            if (cells.size() == 4 && cells[0] == "5")
                found = cells[3] == "unverified";
        }
        c.expect(found, "S-005 question 5 row must be marked unverified");
    }
}

// ---------------------------------------------------------------------------
// criterion 7: determinism across repeat runs and replay

void criterion_determinism(Criterion& c) {
    const SmokeRuns& runs = smoke_runs();
    c.expect(runs.rc_a == 0, "first run exit code " + std::to_string(runs.rc_a));
    c.expect(runs.rc_b == 0, "second run exit code " + std::to_string(runs.rc_b));
    c.expect(runs.rc_c == 0, "replay exit code " + std::to_string(runs.rc_c));

    const fs::path rel = fs::path("report") / "manifest.json";
    std::array<std::string, 3> manifests{};
    std::array<fs::path, 3> outs{runs.out_a, runs.out_b, runs.out_c};
    for (size_t i = 0; i < outs.size(); ++i) {
        if (fs::exists(outs[i] / rel)) manifests[i] = read_file(outs[i] / rel);
        c.expect(!manifests[i].empty(), "manifest missing under " + outs[i].string());
    }
    c.expect(!manifests[0].empty() && manifests[0] == manifests[1],
             "repeat run manifest differs from the first run");
    c.expect(!manifests[0].empty() && manifests[0] == manifests[2],
             "replay manifest differs from the first run");
    if (!manifests[0].empty() && !manifests[2].empty()) {
        auto first = json::parse(manifests[0]);
        auto replayed = json::parse(manifests[2]);
        c.expect(first.at("manifest_hash") == replayed.at("manifest_hash"),
                 "replay must reproduce the manifest hash");
    }
    c.expect(!fs::exists(runs.out_c / "replay_log.jsonl"),
             "replay must not record a new call log");
}

// ---------------------------------------------------------------------------
// criterion 8: smoke corpus report invariants

void criterion_smoke_report(Criterion& c) {
    const SmokeRuns& runs = smoke_runs();
    c.expect(runs.rc_a == 0, "smoke run exit code " + std::to_string(runs.rc_a));

    auto vote_json = read_json_file(runs.out_a / "vote" / "stats.json");
    c.expect(vote_json.has_value(), "vote stats missing from smoke run");
    if (vote_json) {
        c.expect(vote_json->at("total_pairs").get<int>() == 30,
                 "smoke corpus must vote 30 subject/question pairs");
        c.expect(vote_json->at("unassigned_count").get<int>() == 1,
                 "smoke corpus must leave exactly one pair unassigned");
    }

    auto rows_of = [&](int q) {
        std::vector<std::vector<std::string>> rows;
        const fs::path csv =
            runs.out_a / "report" / ("q" + std::to_string(q) + ".csv");
        if (!fs::exists(csv)) return rows;
        bool header = true;
        for (const std::string& line : split_lines(read_file(csv))) {
            if (trim(line).empty()) continue;
            if (header) {
                header = false;
                continue;
            }
            rows.push_back(split(line, ','));
        }
        return rows;
    };

    for (int q : {0, 1, 2, 3}) {  // mutually-exclusive top level
        auto rows = rows_of(q);
        c.expect(!rows.empty(), "q" + std::to_string(q) + ".csv missing or empty");
        double robust_sum = 0.0;
        for (const auto& row : rows) {
            c.expect(row.size() == 10 && row[1].find('"') == std::string::npos,
                     "q" + std::to_string(q) + ": unexpected frequency row shape");
            if (row.size() < 10) continue;
            if (row[1].find('.') == std::string::npos) robust_sum += std::stod(row[7]);
        }
        c.expect(std::fabs(robust_sum - 1.0) <= 1e-9,
                 "q" + std::to_string(q) + ": top-level robust proportions sum to " +
                     std::to_string(robust_sum));
    }

    for (int q : {0, 1, 5}) {  // the script repeats these runs verbatim
        auto rows = rows_of(q);
        c.expect(!rows.empty(), "q" + std::to_string(q) + ".csv missing or empty");
        for (const auto& row : rows) {
            if (row.size() < 10) continue;
            c.expect(std::stod(row[4]) == 0.0,
                     "q" + std::to_string(q) + " cluster " + row[1] +
                         ": proportions must not vary across identical runs");
        }
    }
}

}  // namespace

int main() {
    struct Entry {
        const char* title;
        void (*fn)(Criterion&);
    };
    const std::vector<Entry> entries{
        {"majority voting matches the brute-force oracle", criterion_vote_oracle},
        {"robustness summary arithmetic at reference scale", criterion_robustness_arithmetic},
        {"retry accounting under injected first-attempt failures", criterion_retry_accounting},
        {"mutated responses are rejected with the right reason", criterion_parser_strictness},
        {"agreement statistics match independent references", criterion_statistics_oracles},
        {"fabricated evidence is flagged and surfaced", criterion_evidence_guard},
        {"repeat runs and replay are byte-identical", criterion_determinism},
        {"smoke corpus report invariants hold", criterion_smoke_report},
    };

    int failed = 0;
    for (size_t i = 0; i < entries.size(); ++i) {
        Criterion criterion;
        criterion.number = static_cast<int>(i) + 1;
        criterion.title = entries[i].title;
        try {
            entries[i].fn(criterion);
        } catch (const std::exception& e) {
            criterion.expect(false, std::string("unexpected exception: ") + e.what());
        }
        const bool ok = criterion.failures == 0;
        if (!ok) ++failed;
        std::printf("%s  criterion %d: %s (%ld checks)\n", ok ? "PASS" : "FAIL",
                    criterion.number, criterion.title.c_str(), criterion.checks);
        for (const auto& note : criterion.notes) std::printf("      %s\n", note.c_str());
        if (criterion.failures > static_cast<long>(criterion.notes.size()))
            std::printf("      ... and %ld more failing checks\n",
                        criterion.failures - static_cast<long>(criterion.notes.size()));
    }
    if (failed == 0) {
        std::printf("acceptance: all %zu criteria passed\n", entries.size());
        return 0;
    }
    std::printf("acceptance: %d of %zu criteria failed\n", failed, entries.size());
    return 1;
}
