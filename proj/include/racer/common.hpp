#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace racer {

/// Identifier of one interview subject (e.g. "C-002"). Strong type so
/// subject ids and cluster ids cannot be mixed up silently.
struct SubjectId {
    std::string value;

    SubjectId() = default;
    explicit SubjectId(std::string v) : value(std::move(v)) {}

    auto operator<=>(const SubjectId&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const SubjectId& id) {
    return os << id.value;
}

/// Minimal expected-like result: either a value or a typed failure.
/// Used for response validation, where failures are values that drive
/// the retry loop rather than exceptions.
template <typename T, typename E>
class Result {
public:
    Result(T value) : data_(std::in_place_index<0>, std::move(value)) {}
    Result(E error) : data_(std::in_place_index<1>, std::move(error)) {}

    static Result make_ok(T value) { return Result(std::move(value)); }
    static Result make_error(E error) { return Result(std::move(error)); }

    bool ok() const { return data_.index() == 0; }
    explicit operator bool() const { return ok(); }

    const T& value() const& { return std::get<0>(data_); }
    T&& value() && { return std::get<0>(std::move(data_)); }
    const E& error() const { return std::get<1>(data_); }

private:
    std::variant<T, E> data_;
};

// ---------------------------------------------------------------------------
// string helpers

inline std::string_view trim_view(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

/// Split into lines on '\n', dropping a trailing '\r' from each line.
inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines = split(s, '\n');
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    for (auto& line : lines) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
    }
    return lines;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Strip one layer of symmetric double quotes: `"C1,C2"` -> `C1,C2`.
inline std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        return std::string(s.substr(1, s.size() - 2));
    return std::string(s);
}

/// Map curly quotes and en/em dashes to their ASCII counterparts.
/// Operates on UTF-8 bytes; unknown sequences pass through untouched.
inline std::string normalize_punct(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size();) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c == 0xE2 && i + 2 < s.size()) {
            unsigned char c1 = static_cast<unsigned char>(s[i + 1]);
            unsigned char c2 = static_cast<unsigned char>(s[i + 2]);
            if (c1 == 0x80) {
                if (c2 == 0x98 || c2 == 0x99) { out += '\''; i += 3; continue; }   // ‘ ’
                if (c2 == 0x9C || c2 == 0x9D) { out += '"'; i += 3; continue; }    // “ ”
                if (c2 == 0x93 || c2 == 0x94) { out += '-'; i += 3; continue; }    // en/em dash
            }
        }
        out += s[i];
        ++i;
    }
    return out;
}

/// Canonical form for fuzzy evidence matching: punctuation normalization,
/// ASCII case-fold, whitespace runs collapsed to single spaces.
inline std::string normalize_for_match(std::string_view s) {
    std::string p = normalize_punct(s);
    std::string out;
    out.reserve(p.size());
    bool in_ws = false;
    for (char ch : p) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out += ' ';
        in_ws = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

inline size_t count_words(std::string_view s) {
    size_t n = 0;
    bool in_word = false;
    for (char ch : s) {
        bool ws = std::isspace(static_cast<unsigned char>(ch)) != 0;
        if (!ws && !in_word) ++n;
        in_word = !ws;
    }
    return n;
}

// ---------------------------------------------------------------------------
// hashing (FNV-1a 64-bit) for replay-log keys and artifact manifests

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string to_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

/// Fixed-format double for CSV cells, stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// file helpers

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void append_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot append to file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("append failed: " + path.string());
}

}  // namespace racer
