#include <catch2/catch_amalgamated.hpp>

#include "racer/report.hpp"
#include "support/fixtures.hpp"

using namespace racer;
using namespace racer::report;

namespace {

cluster::ClusterSchemaResult expert_defs() {
    cluster::ClusterSchemaResult defs;
    defs.question_index = 2;
    defs.mode = corpus::ClusteringMode::ExpertGuidedTwoLevel;
    defs.defs = {
        {"C1", "Yes", "x", cluster::Level::Primary, ""},
        {"C1.1", "Brief, but sincere", "x", cluster::Level::Secondary, "C1"},
        {"C2", "No", "x", cluster::Level::Primary, ""},
        {"C3", "Unclear/irrelevant/no response", "x", cluster::Level::Primary, ""},
    };
    return defs;
}

// 10 subjects; C1 takes the first `yes_count`, the rest go to C2.
std::vector<cluster::ClusterAssignment> make_run(int yes_count, int run_index) {
    std::vector<cluster::ClusterAssignment> run;
    for (int i = 0; i < 10; ++i) {
        cluster::ClusterAssignment a;
        a.subject = SubjectId{"S-" + std::to_string(i)};
        a.question_index = 2;
        a.primary = i < yes_count ? "C1" : "C2";
        if (i == 0) a.labels = {"C1.1"};
        a.run_index = run_index;
        run.push_back(a);
    }
    return run;
}

}  // namespace

TEST_CASE("csv escaping") {
    CHECK(csv_escape("plain") == "plain");
    CHECK(csv_escape("a,b") == "\"a,b\"");
    CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_escape("two\nlines") == "\"two\nlines\"");
    CHECK(csv_escape("") == "");
}

TEST_CASE("frequency table aggregates per-run proportions") {
    std::vector<std::vector<cluster::ClusterAssignment>> runs = {
        make_run(5, 0), make_run(5, 1), make_run(5, 2), make_run(6, 3), make_run(4, 4)};
    std::vector<vote::RobustAssignment> robust;
    for (int i = 0; i < 10; ++i) {
        vote::RobustAssignment r;
        r.subject = SubjectId{"S-" + std::to_string(i)};
        r.question_index = 2;
        r.runs_used = 5;
        if (i == 9) {
            // one unassigned pair: excluded from the robust denominator
        } else {
            r.primary = i < 5 ? "C1" : "C2";
            r.confidence = 5;
            if (i == 0) r.labels = {{"C1.1", 5}};
        }
        robust.push_back(r);
    }
    FrequencyTable table = frequency_table(runs, robust, expert_defs());
    CHECK(table.question_index == 2);
    CHECK(table.n_subjects == 10);
    CHECK(table.n_unassigned == 1);
    REQUIRE(table.clusters.size() == 4);

    const ClusterFrequency& c1 = table.clusters[0];
    CHECK(c1.cluster_id == "C1");
    // per-run proportions 0.5, 0.5, 0.5, 0.6, 0.4
    CHECK(c1.mean_proportion == Catch::Approx(0.5));
    CHECK(c1.stddev == Catch::Approx(0.063245553203367585).margin(1e-12));
    CHECK(c1.min_proportion == Catch::Approx(0.4));
    CHECK(c1.max_proportion == Catch::Approx(0.6));
    CHECK(c1.robust_proportion == Catch::Approx(5.0 / 9.0));

    const ClusterFrequency& c11 = table.clusters[1];
    CHECK(c11.cluster_id == "C1.1");
    CHECK(c11.mean_proportion == Catch::Approx(0.1));
    CHECK(c11.stddev == 0.0);  // identical membership across runs

    // robust proportions of the primary rows partition the assigned pairs
    double primary_sum = table.clusters[0].robust_proportion +
                         table.clusters[2].robust_proportion +
                         table.clusters[3].robust_proportion;
    CHECK(primary_sum == Catch::Approx(1.0).margin(1e-9));
    CHECK(table.clusters[3].robust_proportion == 0.0);  // empty cluster still listed
    for (const auto& row : table.clusters) CHECK(row.stddev >= 0.0);

    CHECK_THROWS_AS(frequency_table({}, robust, expert_defs()), std::invalid_argument);
}

TEST_CASE("frequency CSV renders the documented schema") {
    std::vector<std::vector<cluster::ClusterAssignment>> runs = {make_run(5, 0)};
    FrequencyTable table = frequency_table(runs, {}, expert_defs());
    std::string csv = render_frequency_csv(table);
    CHECK_THAT(csv, Catch::Matchers::StartsWith(
                        "question_index,cluster_id,cluster_name,mean_proportion,stddev,min,max,"
                        "robust_proportion,n_subjects,n_unassigned\n"));
    CHECK_THAT(csv, Catch::Matchers::ContainsSubstring("2,C1,Yes,0.5,0,0.5,0.5,0,10,0\n"));
    // commas in cluster names stay one field
    CHECK_THAT(csv, Catch::Matchers::ContainsSubstring("\"Brief, but sincere\""));
    CHECK(csv == render_frequency_csv(table));
}

TEST_CASE("manifest inventories the output tree") {
    racer::testing::TempDir dir("manifest");
    dir.write("report/q0.csv", "alpha");
    dir.write("vote/robust.tsv", "beta");
    dir.write("report/manifest.json", "{}");   // never inventories itself
    dir.write("replay_log.jsonl", "{}");       // backend log excluded by design
    Manifest manifest = build_manifest(dir.path());
    REQUIRE(manifest.files.size() == 2);
    CHECK(manifest.files.at("report/q0.csv") == to_hex(fnv1a64("alpha")));
    CHECK(manifest.files.at("vote/robust.tsv") == to_hex(fnv1a64("beta")));
    CHECK(manifest.files.count("report/manifest.json") == 0);
    CHECK(manifest.files.count("replay_log.jsonl") == 0);

    Manifest again = build_manifest(dir.path());
    CHECK(again.combined_hash == manifest.combined_hash);

    dir.write("vote/robust.tsv", "beta2");
    Manifest changed = build_manifest(dir.path());
    CHECK(changed.combined_hash != manifest.combined_hash);

    std::string json = manifest_json(manifest);
    auto parsed = nlohmann::json::parse(json);
    CHECK(parsed["manifest_hash"] == manifest.combined_hash);
    CHECK(parsed["files"]["report/q0.csv"] == manifest.files.at("report/q0.csv"));
}
