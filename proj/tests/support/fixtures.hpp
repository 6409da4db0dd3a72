#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "racer/common.hpp"

namespace racer::testing {

/// Self-cleaning scratch directory for filesystem-facing tests.
class TempDir {
  public:
    explicit TempDir(const std::string& label) {
        static std::atomic<unsigned> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("racer_" + label + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter.fetch_add(1)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& relative) const { return path_ / relative; }
    void write(const std::string& relative, const std::string& content) const {
        racer::write_file(path_ / relative, content);
    }

  private:
    std::filesystem::path path_;
};

inline std::filesystem::path source_dir() { return RACER_SOURCE_DIR; }
inline std::filesystem::path reference_schema_path() {
    return source_dir() / "data" / "reference_schema.json";
}

/// Rows of a tab-separated fixture under tests/data, header line dropped.
inline std::vector<std::vector<std::string>> load_fixture_rows(const std::string& name) {
    auto text = racer::read_file(source_dir() / "tests" / "data" / name);
    std::vector<std::vector<std::string>> rows;
    bool header = true;
    for (const std::string& line : racer::split_lines(text)) {
        if (racer::trim(line).empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        rows.push_back(racer::split(line, '\t'));
    }
    return rows;
}

}  // namespace racer::testing
