#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "racer/common.hpp"
#include "racer/corpus.hpp"
#include "racer/numeric.hpp"
#include "racer/vote.hpp"

namespace racer::stats {

// One evaluator's verdict on a subject/question pair: a label set, or an explicit
// unassigned marker. The two states are mutually exclusive.
struct LabelSet {
    std::set<std::string> labels;
    bool unassigned = false;

    bool operator==(const LabelSet&) const = default;
};

inline LabelSet make_unassigned() { return LabelSet{{}, true}; }

using PairKey = std::pair<SubjectId, int>;  // subject, question_index

struct EvaluatorLabels {
    std::string evaluator_id;
    std::map<PairKey, LabelSet> labels;
};

// Evaluator label TSV: evaluator_id, subject_id, question_index, labels. The labels
// cell is comma-joined cluster ids, or the literal "unassigned". The same format
// serves human evaluators and the machine, so the two are interchangeable inputs.
inline std::vector<EvaluatorLabels> parse_evaluator_tsv(const std::string& text) {
    std::map<std::string, EvaluatorLabels> by_id;
    std::vector<std::string> order;
    bool first_content = true;
    for (const std::string& line : split_lines(text)) {
        if (trim(line).empty()) continue;
        auto cells = split(line, '\t');
        if (first_content && !cells.empty() && cells[0] == "evaluator_id") {
            first_content = false;
            continue;
        }
        first_content = false;
        if (cells.size() != 4)
            throw std::runtime_error("evaluator TSV row needs 4 columns: " + line);
        const std::string evaluator = trim(cells[0]);
        const std::string subject = trim(cells[1]);
        if (evaluator.empty() || subject.empty())
            throw std::runtime_error("evaluator TSV row lacks ids: " + line);
        int question = 0;
        const std::string qcell = trim(cells[2]);
        auto [qp, qe] = std::from_chars(qcell.data(), qcell.data() + qcell.size(), question);
        if (qe != std::errc() || qp != qcell.data() + qcell.size())
            throw std::runtime_error("evaluator TSV row has a bad question index: " + line);
        LabelSet set;
        const std::string cell = trim(unquote(trim(cells[3])));
        if (cell == "unassigned") {
            set.unassigned = true;
        } else {
            for (const std::string& part : split(cell, ','))
                if (!trim(part).empty()) set.labels.insert(trim(part));
            if (set.labels.empty())
                throw std::runtime_error("evaluator TSV row has no labels: " + line);
        }
        auto [it, inserted] = by_id.try_emplace(evaluator);
        if (inserted) {
            it->second.evaluator_id = evaluator;
            order.push_back(evaluator);
        }
        auto [lit, fresh] = it->second.labels.emplace(PairKey{SubjectId{subject}, question}, set);
        if (!fresh)
            throw std::runtime_error("evaluator TSV labels " + subject + "/q" +
                                     std::to_string(question) + " twice for " + evaluator);
    }
    std::vector<EvaluatorLabels> out;
    out.reserve(order.size());
    for (const std::string& id : order) out.push_back(std::move(by_id.at(id)));
    return out;
}

// Projects majority-voted assignments onto the evaluator format: exclusive questions
// contribute their primary as a singleton, flat-clustered questions their retained
// label set, unassigned pairs the explicit marker.
inline EvaluatorLabels machine_labels(const std::vector<vote::RobustAssignment>& robust,
                                      const corpus::QuestionSchema& schema,
                                      const std::string& evaluator_id) {
    EvaluatorLabels out;
    out.evaluator_id = evaluator_id;
    for (const auto& r : robust) {
        LabelSet set;
        if (!r.assigned()) {
            set.unassigned = true;
        } else if (schema.at(r.question_index).exclusive()) {
            set.labels.insert(*r.primary);
        } else {
            for (const auto& [id, count] : r.labels) set.labels.insert(id);
        }
        out.labels.emplace(PairKey{r.subject, r.question_index}, std::move(set));
    }
    return out;
}

// 1 iff the two verdicts agree: equal singletons for exclusive questions, subset or
// superset for non-exclusive ones. An unassigned side always counts as a mismatch.
inline int concordance_score(const LabelSet& a, const LabelSet& b, bool exclusive) {
    if (a.unassigned || b.unassigned) return 0;
    if (a.labels.empty() || b.labels.empty())
        throw std::invalid_argument("concordance_score: empty label set without the unassigned "
                                    "marker");
    if (exclusive) return a.labels.size() == 1 && a.labels == b.labels ? 1 : 0;
    const auto& small = a.labels.size() <= b.labels.size() ? a.labels : b.labels;
    const auto& large = a.labels.size() <= b.labels.size() ? b.labels : a.labels;
    return std::includes(large.begin(), large.end(), small.begin(), small.end()) ? 1 : 0;
}

struct AgreementRecord {
    SubjectId subject;
    int question_index = 0;
    bool exclusive = false;
    std::map<std::string, LabelSet> labels;  // evaluator_id -> verdict
};

// One record per subject/question pair any evaluator labeled, sorted by
// (question_index, subject).
inline std::vector<AgreementRecord> build_agreement_records(
    const std::vector<EvaluatorLabels>& evaluators, const corpus::QuestionSchema& schema) {
    std::map<PairKey, AgreementRecord> by_key;
    for (const auto& evaluator : evaluators) {
        for (const auto& [key, set] : evaluator.labels) {
            auto [it, fresh] = by_key.try_emplace(key);
            if (fresh) {
                it->second.subject = key.first;
                it->second.question_index = key.second;
                it->second.exclusive = schema.at(key.second).exclusive();
            }
            it->second.labels.emplace(evaluator.evaluator_id, set);
        }
    }
    std::vector<AgreementRecord> records;
    records.reserve(by_key.size());
    for (auto& [key, record] : by_key) records.push_back(std::move(record));
    std::sort(records.begin(), records.end(),
              [](const AgreementRecord& a, const AgreementRecord& b) {
                  return std::tie(a.question_index, a.subject) <
                         std::tie(b.question_index, b.subject);
              });
    return records;
}

// Mean pair score over records both evaluators labeled; no shared records -> undefined.
inline std::optional<double> pairwise_concordance(const std::vector<AgreementRecord>& records,
                                                  const std::string& a, const std::string& b) {
    int shared = 0;
    int matched = 0;
    for (const auto& record : records) {
        auto ita = record.labels.find(a);
        auto itb = record.labels.find(b);
        if (ita == record.labels.end() || itb == record.labels.end()) continue;
        ++shared;
        matched += concordance_score(ita->second, itb->second, record.exclusive);
    }
    if (shared == 0) return std::nullopt;
    return static_cast<double>(matched) / static_cast<double>(shared);
}

// Fraction of fully-labeled records where every evaluator pair agrees.
inline std::optional<double> kway_concordance(const std::vector<AgreementRecord>& records,
                                              const std::vector<std::string>& evaluators) {
    if (evaluators.size() < 2)
        throw std::invalid_argument("kway_concordance: needs at least two evaluators");
    int covered = 0;
    int unanimous = 0;
    for (const auto& record : records) {
        bool all_present = true;
        for (const auto& id : evaluators)
            if (!record.labels.count(id)) all_present = false;
        if (!all_present) continue;
        ++covered;
        bool agree = true;
        for (size_t i = 0; i < evaluators.size() && agree; ++i)
            for (size_t j = i + 1; j < evaluators.size() && agree; ++j)
                agree = concordance_score(record.labels.at(evaluators[i]),
                                          record.labels.at(evaluators[j]),
                                          record.exclusive) == 1;
        if (agree) ++unanimous;
    }
    if (covered == 0) return std::nullopt;
    return static_cast<double>(unanimous) / static_cast<double>(covered);
}

namespace detail {

// An exclusive verdict as a single category, with unassigned as its own category.
inline std::string kappa_category(const LabelSet& set) {
    if (set.unassigned) return "unassigned";
    if (set.labels.size() != 1)
        throw std::invalid_argument("cohens_kappa: exclusive questions need singleton labels");
    return *set.labels.begin();
}

}  // namespace detail

// Cohen's kappa over one exclusive question. Undefined when chance agreement is total
// while observed agreement is not; both raters constant on the same category is
// perfect agreement, 1.
inline std::optional<double> cohens_kappa(const EvaluatorLabels& a, const EvaluatorLabels& b,
                                          int question_index) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [key, left] : a.labels) {
        if (key.second != question_index) continue;
        auto it = b.labels.find(key);
        if (it == b.labels.end()) continue;
        pairs.emplace_back(detail::kappa_category(left), detail::kappa_category(it->second));
    }
    if (pairs.empty()) return std::nullopt;
    std::map<std::string, double> left_marginal;
    std::map<std::string, double> right_marginal;
    double observed = 0.0;
    const double n = static_cast<double>(pairs.size());
    for (const auto& [left, right] : pairs) {
        left_marginal[left] += 1.0 / n;
        right_marginal[right] += 1.0 / n;
        if (left == right) observed += 1.0 / n;
    }
    double expected = 0.0;
    for (const auto& [category, p] : left_marginal) {
        auto it = right_marginal.find(category);
        if (it != right_marginal.end()) expected += p * it->second;
    }
    if (std::fabs(1.0 - expected) < 1e-12)
        return observed >= 1.0 - 1e-12 ? std::optional<double>(1.0) : std::nullopt;
    return (observed - expected) / (1.0 - expected);
}

struct SpearmanResult {
    std::optional<double> rho;
    std::optional<double> p;  // two-sided, t-approximation
};

// Rank correlation with average ranks for ties. Fewer than 3 points or a constant
// side leaves rho undefined.
inline SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman_rho: length mismatch");
    SpearmanResult result;
    if (x.size() < 3) return result;
    const double rho = numeric::pearson(numeric::average_ranks(x), numeric::average_ranks(y));
    if (std::isnan(rho)) return result;
    result.rho = rho;
    const double df = static_cast<double>(x.size() - 2);
    const double denom = 1.0 - rho * rho;
    if (denom <= 0.0) {
        result.p = 0.0;
    } else {
        result.p = numeric::student_t_two_sided_p(rho * std::sqrt(df / denom), df);
    }
    return result;
}

struct ChiSquareResult {
    std::optional<double> statistic;
    std::optional<double> p;
};

// 2x2 chi-square with the Yates continuity correction, clamped at zero so cells
// within half a count of expectation contribute nothing. Zero marginals leave the
// statistic undefined.
inline ChiSquareResult chi_square_yates(const std::array<std::array<double, 2>, 2>& observed) {
    ChiSquareResult result;
    const double row0 = observed[0][0] + observed[0][1];
    const double row1 = observed[1][0] + observed[1][1];
    const double col0 = observed[0][0] + observed[1][0];
    const double col1 = observed[0][1] + observed[1][1];
    const double total = row0 + row1;
    if (row0 <= 0.0 || row1 <= 0.0 || col0 <= 0.0 || col1 <= 0.0) return result;
    double statistic = 0.0;
    const std::array<double, 2> rows = {row0, row1};
    const std::array<double, 2> cols = {col0, col1};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double expected = rows[static_cast<size_t>(i)] * cols[static_cast<size_t>(j)] /
                                    total;
            const double deviation =
                std::max(std::fabs(observed[static_cast<size_t>(i)][static_cast<size_t>(j)] -
                                   expected) - 0.5,
                         0.0);
            statistic += deviation * deviation / expected;
        }
    }
    result.statistic = statistic;
    result.p = numeric::chi_square_p_df1(statistic);
    return result;
}

// Figure-legend significance stars.
inline std::string significance_stars(double p) {
    if (p < 0.0001) return "****";
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

struct ConfidenceConcordanceReport {
    std::map<int, double> mean_confidence_by_question;  // over assigned machine pairs
    std::map<int, double> pair_concordance_by_question;  // mean across present pairs
    std::map<int, int> concordant_confidence_histogram;
    std::map<int, int> nonconcordant_confidence_histogram;
    SpearmanResult spearman;          // mean confidence vs pair concordance, per question
    ChiSquareResult chi_square;       // fully-robust vs not x concordant vs not
};

namespace detail {

// Mean concordance across all labeled evaluator pairs on one record; empty when
// fewer than two evaluators labeled it.
inline std::optional<double> record_pair_mean(const AgreementRecord& record) {
    std::vector<const LabelSet*> sets;
    for (const auto& [id, set] : record.labels) sets.push_back(&set);
    if (sets.size() < 2) return std::nullopt;
    double sum = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < sets.size(); ++i) {
        for (size_t j = i + 1; j < sets.size(); ++j) {
            sum += concordance_score(*sets[i], *sets[j], record.exclusive);
            ++pairs;
        }
    }
    return sum / pairs;
}

}  // namespace detail

// Links machine confidence to human agreement: a record is concordant when the
// machine matches every human evaluator who labeled it.
inline ConfidenceConcordanceReport confidence_vs_concordance(
    const std::vector<vote::RobustAssignment>& robust,
    const std::vector<AgreementRecord>& records, const std::string& machine_id) {
    ConfidenceConcordanceReport report;
    std::map<PairKey, const vote::RobustAssignment*> by_key;
    for (const auto& r : robust) by_key[PairKey{r.subject, r.question_index}] = &r;

    std::map<int, std::vector<double>> confidences;
    std::map<int, std::vector<double>> pair_means;
    for (const auto& r : robust)
        if (r.assigned())
            confidences[r.question_index].push_back(static_cast<double>(*r.confidence));

    for (const auto& record : records) {
        if (auto mean = detail::record_pair_mean(record); mean.has_value())
            pair_means[record.question_index].push_back(*mean);

        auto machine = record.labels.find(machine_id);
        if (machine == record.labels.end()) continue;
        auto voted = by_key.find(PairKey{record.subject, record.question_index});
        if (voted == by_key.end() || !voted->second->assigned()) continue;
        bool concordant = true;
        bool any_human = false;
        for (const auto& [id, set] : record.labels) {
            if (id == machine_id) continue;
            any_human = true;
            if (concordance_score(machine->second, set, record.exclusive) == 0)
                concordant = false;
        }
        if (!any_human) continue;
        const int confidence = *voted->second->confidence;
        if (concordant)
            ++report.concordant_confidence_histogram[confidence];
        else
            ++report.nonconcordant_confidence_histogram[confidence];
    }

    for (const auto& [question, values] : confidences)
        report.mean_confidence_by_question[question] = numeric::mean(values);
    for (const auto& [question, values] : pair_means)
        report.pair_concordance_by_question[question] = numeric::mean(values);

    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto& [question, confidence] : report.mean_confidence_by_question) {
        auto it = report.pair_concordance_by_question.find(question);
        if (it == report.pair_concordance_by_question.end()) continue;
        xs.push_back(confidence);
        ys.push_back(it->second);
    }
    report.spearman = spearman_rho(xs, ys);

    int runs_used = 0;
    for (const auto& r : robust) runs_used = std::max(runs_used, r.runs_used);
    std::array<std::array<double, 2>, 2> table{};  // rows: fully robust / not
    auto tally = [&](const std::map<int, int>& histogram, size_t column) {
        for (const auto& [confidence, count] : histogram)
            table[confidence == runs_used ? 0 : 1][column] += count;
    };
    tally(report.concordant_confidence_histogram, 0);
    tally(report.nonconcordant_confidence_histogram, 1);
    report.chi_square = chi_square_yates(table);
    return report;
}

}  // namespace racer::stats
