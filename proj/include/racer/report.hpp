#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "racer/cluster.hpp"
#include "racer/common.hpp"
#include "racer/numeric.hpp"
#include "racer/vote.hpp"

namespace racer::report {

// RFC-4180 quoting: fields holding commas, quotes, or newlines are wrapped and
// inner quotes doubled.
inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

struct ClusterFrequency {
    std::string cluster_id;
    std::string cluster_name;
    double mean_proportion = 0.0;
    double stddev = 0.0;  // population std-dev of the per-run proportions
    double min_proportion = 0.0;
    double max_proportion = 0.0;
    double robust_proportion = 0.0;
};

struct FrequencyTable {
    int question_index = 0;
    int n_subjects = 0;
    int n_unassigned = 0;
    std::vector<ClusterFrequency> clusters;  // definition order
};

namespace detail {

inline bool member(const cluster::ClusterAssignment& a, const std::string& cluster_id) {
    if (a.primary.has_value() && *a.primary == cluster_id) return true;
    return std::find(a.labels.begin(), a.labels.end(), cluster_id) != a.labels.end();
}

inline bool member(const vote::RobustAssignment& r, const std::string& cluster_id) {
    if (r.primary.has_value() && *r.primary == cluster_id) return true;
    return r.labels.count(cluster_id) > 0;
}

}  // namespace detail

// Per-cluster membership proportions for one question: mean/spread/min/max across the
// runs (denominator: all subjects, every run covers them all) plus the majority-voted
// proportion (denominator: assigned pairs only, so primary rows of an exclusive
// question partition to 1).
inline FrequencyTable frequency_table(const std::vector<std::vector<cluster::ClusterAssignment>>& runs,
                                      const std::vector<vote::RobustAssignment>& robust,
                                      const cluster::ClusterSchemaResult& defs) {
    if (runs.empty() || runs.front().empty())
        throw std::invalid_argument("frequency_table: no run data");
    FrequencyTable table;
    table.question_index = defs.question_index;
    table.n_subjects = static_cast<int>(runs.front().size());
    int assigned = 0;
    for (const auto& r : robust) {
        if (r.assigned())
            ++assigned;
        else
            ++table.n_unassigned;
    }
    for (const auto& def : defs.defs) {
        ClusterFrequency row;
        row.cluster_id = def.cluster_id;
        row.cluster_name = def.name;
        std::vector<double> proportions;
        for (const auto& run : runs) {
            int members = 0;
            for (const auto& a : run)
                if (detail::member(a, def.cluster_id)) ++members;
            proportions.push_back(static_cast<double>(members) /
                                  static_cast<double>(run.size()));
        }
        row.mean_proportion = numeric::mean(proportions);
        row.stddev = numeric::population_stddev(proportions);
        row.min_proportion = *std::min_element(proportions.begin(), proportions.end());
        row.max_proportion = *std::max_element(proportions.begin(), proportions.end());
        if (assigned > 0) {
            int members = 0;
            for (const auto& r : robust)
                if (r.assigned() && detail::member(r, def.cluster_id)) ++members;
            row.robust_proportion = static_cast<double>(members) / assigned;
        }
        table.clusters.push_back(std::move(row));
    }
    return table;
}

inline std::string render_frequency_csv(const FrequencyTable& table) {
    std::string out =
        "question_index,cluster_id,cluster_name,mean_proportion,stddev,min,max,"
        "robust_proportion,n_subjects,n_unassigned\n";
    for (const auto& row : table.clusters) {
        out += std::to_string(table.question_index);
        out += ',' + csv_escape(row.cluster_id);
        out += ',' + csv_escape(row.cluster_name);
        out += ',' + format_double(row.mean_proportion);
        out += ',' + format_double(row.stddev);
        out += ',' + format_double(row.min_proportion);
        out += ',' + format_double(row.max_proportion);
        out += ',' + format_double(row.robust_proportion);
        out += ',' + std::to_string(table.n_subjects);
        out += ',' + std::to_string(table.n_unassigned);
        out += '\n';
    }
    return out;
}

// Content inventory of an output tree. The manifest itself and the backend replay log
// are excluded so reruns and replays can be compared hash for hash.
struct Manifest {
    std::map<std::string, std::string> files;  // relative path -> content hash
    std::string combined_hash;
};

inline Manifest build_manifest(const std::filesystem::path& root) {
    Manifest manifest;
    if (std::filesystem::exists(root)) {
        for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            std::string relative = entry.path().lexically_relative(root).generic_string();
            if (relative == "report/manifest.json" || relative == "replay_log.jsonl") continue;
            manifest.files.emplace(std::move(relative),
                                   to_hex(fnv1a64(read_file(entry.path()))));
        }
    }
    std::string combined;
    for (const auto& [path, hash] : manifest.files) combined += path + "\t" + hash + "\n";
    manifest.combined_hash = to_hex(fnv1a64(combined));
    return manifest;
}

inline std::string manifest_json(const Manifest& manifest) {
    nlohmann::json j;
    j["files"] = manifest.files;
    j["manifest_hash"] = manifest.combined_hash;
    return j.dump(2) + "\n";
}

}  // namespace racer::report
