#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "racer/common.hpp"

namespace racer::corpus {

enum class Audience { All, StudentsOnly, NonStudentsOnly };
enum class ClusteringMode { ExpertGuidedTwoLevel, LlmDiscoveredSingleLevel };

inline std::string to_string(Audience a) {
    switch (a) {
        case Audience::All: return "all";
        case Audience::StudentsOnly: return "students-only";
        case Audience::NonStudentsOnly: return "non-students-only";
    }
    return "all";
}

inline Audience audience_from_string(const std::string& s) {
    if (s == "all") return Audience::All;
    if (s == "students-only") return Audience::StudentsOnly;
    if (s == "non-students-only") return Audience::NonStudentsOnly;
    throw std::runtime_error("unknown audience: " + s);
}

inline std::string to_string(ClusteringMode m) {
    return m == ClusteringMode::ExpertGuidedTwoLevel ? "expert-guided-two-level"
                                                     : "llm-discovered-single-level";
}

inline ClusteringMode clustering_mode_from_string(const std::string& s) {
    if (s == "expert-guided-two-level") return ClusteringMode::ExpertGuidedTwoLevel;
    if (s == "llm-discovered-single-level") return ClusteringMode::LlmDiscoveredSingleLevel;
    throw std::runtime_error("unknown clustering_mode: " + s);
}

/// True for the catch-all bucket every cluster list must provide
/// ("Unclear/irrelevant/no response", "Excluded", ...).
inline bool is_catch_all_name(std::string_view name) {
    std::string low = to_lower(name);
    return low.find("unclear") != std::string::npos || low.find("exclu") != std::string::npos;
}

/// Parse an expert cluster list in its prompt form,
/// "(1) Yes, (2) No, and (3) Unclear/irrelevant/no response",
/// into the bare cluster names. Splits on "(<digits>)" markers so names
/// may themselves contain commas or parenthesised ranges.
inline std::vector<std::string> parse_cluster_display(std::string_view display) {
    std::vector<size_t> marks;
    for (size_t i = 0; i + 2 < display.size(); ++i) {
        if (display[i] != '(') continue;
        size_t j = i + 1;
        while (j < display.size() && std::isdigit(static_cast<unsigned char>(display[j]))) ++j;
        if (j > i + 1 && j < display.size() && display[j] == ')') marks.push_back(i);
    }
    std::vector<std::string> names;
    for (size_t k = 0; k < marks.size(); ++k) {
        size_t begin = display.find(')', marks[k]) + 1;
        size_t end = (k + 1 < marks.size()) ? marks[k + 1] : display.size();
        std::string seg = trim(display.substr(begin, end - begin));
        // strip the list separators: trailing ",", ", and", "and"
        while (!seg.empty()) {
            if (seg.back() == ',') {
                seg = trim(std::string_view(seg).substr(0, seg.size() - 1));
            } else if (seg.size() >= 4 && seg.compare(seg.size() - 4, 4, " and") == 0) {
                seg = trim(std::string_view(seg).substr(0, seg.size() - 4));
            } else {
                break;
            }
        }
        if (!seg.empty()) names.push_back(seg);
    }
    return names;
}

/// Render cluster names back into the prompt list form.
inline std::string render_cluster_display(const std::vector<std::string>& names) {
    std::string out;
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) out += (i + 1 == names.size()) ? ", and " : ", ";
        out += "(" + std::to_string(i + 1) + ") " + names[i];
    }
    return out;
}

struct Question {
    int index = 0;
    std::string text;
    Audience audience = Audience::All;
    ClusteringMode clustering_mode = ClusteringMode::LlmDiscoveredSingleLevel;
    std::vector<std::string> expert_clusters;   // primary cluster names, expert mode only
    std::string expert_clusters_display;        // verbatim list as it appears in the prompt
    std::string response_format;                // optional retrieval format note

    bool expert_guided() const { return clustering_mode == ClusteringMode::ExpertGuidedTwoLevel; }
    /// Exclusive questions compare as single labels; expert primary clusters
    /// are mutually exclusive by construction.
    bool exclusive() const { return expert_guided(); }
};

struct QuestionSchema {
    std::vector<Question> questions;

    int total() const { return static_cast<int>(questions.size()); }
    int count(Audience a) const {
        int n = 0;
        for (const auto& q : questions)
            if (q.audience == a) ++n;
        return n;
    }
    const Question& at(int index) const {
        for (const auto& q : questions)
            if (q.index == index) return q;
        throw std::out_of_range("no question with index " + std::to_string(index));
    }
};

struct TranscriptTurn {
    std::string speaker;    // empty when the opening lines had no prefix
    std::string text;
    std::string raw_block;  // original lines, so concatenation reproduces the file
};

struct Transcript {
    SubjectId subject;
    std::vector<TranscriptTurn> turns;
    std::string raw_text;

    size_t word_count() const { return count_words(raw_text); }
};

struct SubjectProfile {
    SubjectId subject;
    bool is_student = false;
    std::string source_path;
};

struct Corpus {
    std::vector<Transcript> transcripts;   // sorted by subject id
    std::vector<SubjectProfile> profiles;  // sorted by subject id
    QuestionSchema schema;
    std::vector<std::string> warnings;     // unreadable/skipped inputs, reported not dropped

    const Transcript& transcript(const SubjectId& id) const {
        for (const auto& t : transcripts)
            if (t.subject == id) return t;
        throw std::out_of_range("no transcript for subject " + id.value);
    }
    const SubjectProfile& profile(const SubjectId& id) const {
        for (const auto& p : profiles)
            if (p.subject == id) return p;
        throw std::out_of_range("no profile for subject " + id.value);
    }
};

// ---------------------------------------------------------------------------
// schema loading

inline QuestionSchema schema_from_json(const nlohmann::json& j) {
    QuestionSchema schema;
    std::vector<std::string> violations;
    if (!j.contains("questions") || !j["questions"].is_array())
        throw std::runtime_error("schema file: missing \"questions\" array");
    int expected_index = 0;
    for (const auto& qj : j["questions"]) {
        Question q;
        q.index = qj.at("index").get<int>();
        q.text = qj.at("text").get<std::string>();
        q.audience = audience_from_string(qj.value("audience", "all"));
        q.clustering_mode = clustering_mode_from_string(qj.at("clustering_mode").get<std::string>());
        q.response_format = qj.value("response_format", "");
        if (qj.contains("expert_clusters"))
            q.expert_clusters = qj["expert_clusters"].get<std::vector<std::string>>();
        q.expert_clusters_display = qj.value("expert_clusters_display", "");
        if (q.expert_clusters.empty() && !q.expert_clusters_display.empty())
            q.expert_clusters = parse_cluster_display(q.expert_clusters_display);
        if (q.expert_clusters_display.empty() && !q.expert_clusters.empty())
            q.expert_clusters_display = render_cluster_display(q.expert_clusters);

        std::string tag = "question " + std::to_string(q.index);
        if (q.index != expected_index)
            violations.push_back(tag + ": index out of order (expected " +
                                 std::to_string(expected_index) + ")");
        ++expected_index;
        if (trim(q.text).empty()) violations.push_back(tag + ": empty text");
        if (q.expert_guided()) {
            if (q.expert_clusters.empty()) {
                violations.push_back(tag + ": expert-guided-two-level requires expert_clusters");
            } else {
                std::set<std::string> uniq(q.expert_clusters.begin(), q.expert_clusters.end());
                if (uniq.size() != q.expert_clusters.size())
                    violations.push_back(tag + ": duplicate expert cluster names");
                int catch_alls = 0;
                for (const auto& name : q.expert_clusters)
                    if (is_catch_all_name(name)) ++catch_alls;
                if (catch_alls != 1)
                    violations.push_back(tag + ": expert cluster list needs exactly one " +
                                         "unclear/excluded catch-all, found " +
                                         std::to_string(catch_alls));
            }
        } else if (!q.expert_clusters.empty()) {
            violations.push_back(tag + ": expert_clusters present but mode is " +
                                 to_string(q.clustering_mode));
        }
        schema.questions.push_back(std::move(q));
    }
    if (!violations.empty())
        throw std::runtime_error("invalid question schema:\n  " + join(violations, "\n  "));
    return schema;
}

inline QuestionSchema load_schema(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("schema file " + path.string() + ": " + e.what());
    }
    return schema_from_json(j);
}

// ---------------------------------------------------------------------------
// transcript parsing

/// Matches "Speaker <token>:" at the start of a line. Returns the prefix
/// length (through the colon), or 0 when the line is a continuation.
inline size_t speaker_prefix_len(std::string_view line) {
    static constexpr std::string_view kWord = "speaker";
    std::string low = to_lower(line.substr(0, kWord.size()));
    if (low != kWord) return 0;
    size_t i = kWord.size();
    if (i >= line.size() || !std::isspace(static_cast<unsigned char>(line[i]))) return 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t tok_begin = i;
    while (i < line.size() && line[i] != ':' && !std::isspace(static_cast<unsigned char>(line[i])))
        ++i;
    if (i == tok_begin || i - tok_begin > 20) return 0;
    if (i >= line.size() || line[i] != ':') return 0;
    return i + 1;
}

/// Diarized plain-text transcript: optional "Speaker N:" prefixes start new
/// turns, unprefixed lines continue the previous turn. Lossless: raw_text is
/// the concatenation of the turn blocks.
inline Transcript parse_transcript(SubjectId subject, std::string_view content) {
    Transcript t;
    t.subject = std::move(subject);
    std::string normalized(content);
    // normalize CRLF so evidence matching is line-ending independent
    std::string no_cr;
    no_cr.reserve(normalized.size());
    for (size_t i = 0; i < normalized.size(); ++i) {
        if (normalized[i] == '\r' && i + 1 < normalized.size() && normalized[i + 1] == '\n') continue;
        no_cr += normalized[i];
    }
    t.raw_text = no_cr;

    std::vector<std::string> lines = split(no_cr, '\n');
    for (size_t li = 0; li < lines.size(); ++li) {
        const std::string& line = lines[li];
        std::string block = line + (li + 1 < lines.size() ? "\n" : "");
        size_t plen = speaker_prefix_len(line);
        if (plen > 0 || t.turns.empty()) {
            TranscriptTurn turn;
            if (plen > 0) {
                turn.speaker = trim(line.substr(0, plen - 1));
                turn.text = trim(line.substr(plen));
            } else {
                turn.text = line;
            }
            turn.raw_block = block;
            t.turns.push_back(std::move(turn));
        } else {
            TranscriptTurn& prev = t.turns.back();
            if (!prev.text.empty() && !trim(line).empty()) prev.text += "\n";
            if (!trim(line).empty()) prev.text += line;
            prev.raw_block += block;
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// corpus loading

/// Metadata sidecar: TSV rows "subject_id<TAB>is_student", optional header.
inline std::map<SubjectId, bool> load_metadata(const std::filesystem::path& path) {
    std::map<SubjectId, bool> meta;
    std::vector<std::string> lines = split_lines(read_file(path));
    for (size_t i = 0; i < lines.size(); ++i) {
        std::string line = trim(lines[i]);
        if (line.empty()) continue;
        std::vector<std::string> cells = split(line, '\t');
        if (i == 0 && !cells.empty() && to_lower(trim(cells[0])) == "subject_id") continue;
        if (cells.size() != 2)
            throw std::runtime_error("metadata file " + path.string() + " line " +
                                     std::to_string(i + 1) + ": expected 2 tab-separated columns");
        SubjectId id(trim(cells[0]));
        std::string flag = to_lower(trim(cells[1]));
        bool is_student;
        if (flag == "true" || flag == "1" || flag == "yes") is_student = true;
        else if (flag == "false" || flag == "0" || flag == "no") is_student = false;
        else
            throw std::runtime_error("metadata file " + path.string() + ": bad is_student value \"" +
                                     cells[1] + "\" for subject " + id.value);
        if (meta.count(id))
            throw std::runtime_error("duplicate subject id in metadata: " + id.value);
        meta[id] = is_student;
    }
    return meta;
}

/// Load one transcript per "<subject_id>.txt" in `directory`, pair each with
/// its metadata record, and attach the question schema. Unreadable or empty
/// files become warnings; duplicate subject ids and missing metadata are errors.
inline Corpus load_corpus(const std::filesystem::path& directory,
                          const std::filesystem::path& metadata_path,
                          const std::filesystem::path& schema_path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(directory))
        throw std::runtime_error("transcript directory does not exist: " + directory.string());

    Corpus corpus;
    corpus.schema = load_schema(schema_path);
    std::map<SubjectId, bool> meta = load_metadata(metadata_path);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        corpus.warnings.push_back("transcript directory is empty: " + directory.string());

    std::set<SubjectId> seen;
    for (const auto& file : files) {
        SubjectId id(trim(file.stem().string()));
        if (id.value.empty()) {
            corpus.warnings.push_back("skipping transcript with empty subject id: " + file.string());
            continue;
        }
        if (!seen.insert(id).second)
            throw std::runtime_error("duplicate subject id across transcript files: " + id.value);
        std::string content;
        try {
            content = read_file(file);
        } catch (const std::exception& e) {
            corpus.warnings.push_back(std::string("unreadable transcript: ") + e.what());
            continue;
        }
        Transcript t = parse_transcript(id, content);
        if (t.word_count() == 0) {
            corpus.warnings.push_back("empty transcript skipped: " + file.string());
            continue;
        }
        auto it = meta.find(id);
        if (it == meta.end())
            throw std::runtime_error("no metadata record for subject " + id.value);
        corpus.transcripts.push_back(std::move(t));
        corpus.profiles.push_back(SubjectProfile{id, it->second, file.string()});
    }
    for (const auto& [id, _] : meta) {
        if (!seen.count(id))
            corpus.warnings.push_back("metadata names subject with no transcript: " + id.value);
    }
    return corpus;
}

/// Audience filter: students get everything except non-students-only
/// questions and vice versa; schema order is preserved.
inline std::vector<Question> applicable_questions(const QuestionSchema& schema,
                                                  const SubjectProfile& profile) {
    std::vector<Question> out;
    for (const auto& q : schema.questions) {
        if (q.audience == Audience::StudentsOnly && !profile.is_student) continue;
        if (q.audience == Audience::NonStudentsOnly && profile.is_student) continue;
        out.push_back(q);
    }
    return out;
}

}  // namespace racer::corpus
