#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "racer/common.hpp"
#include "racer/llm.hpp"

namespace racer::config {

// Credentials stay in the environment: the config names the variable, never the key.
struct BackendConfig {
    std::optional<std::string> endpoint;          // live OpenAI-compatible server
    std::optional<std::string> mock_script_path;  // scripted backend; exactly one of the two
    std::string api_key_env = "OPENAI_API_KEY";
    llm::ModelSpec standard{"gpt-4", 8192};
    llm::ModelSpec large{"gpt-4-32k", 32768};
    double token_margin = 1.1;
    int max_output_tokens = 0;  // 0: per-stage defaults
    int requests_per_minute = 0;
    int tokens_per_minute = 0;
    int retry_attempts = 5;
    int retry_initial_backoff_ms = 1000;
};

struct Temperatures {
    double retrieve = 1.0;
    double cluster = 1.0;
    double recluster = 1.0;
};

struct PipelineConfig {
    std::filesystem::path corpus_dir;
    std::filesystem::path metadata_path;
    std::filesystem::path schema_path;
    std::filesystem::path output_dir;
    int workers = 1;
    int run_count = 5;  // total clustering runs, the first plus the re-runs
    int attempt_cap = 10;
    unsigned seed = 0;
    BackendConfig backend;
    Temperatures temperatures;
    std::vector<std::filesystem::path> evaluator_label_paths;
    std::string machine_evaluator_id = "RACER";
};

// Pure invariant checks; returns every violation, not just the first.
inline std::vector<std::string> validate_config(const PipelineConfig& config) {
    std::vector<std::string> violations;
    auto require_path = [&](const std::filesystem::path& p, const std::string& field) {
        if (p.empty()) violations.push_back(field + " is required");
    };
    require_path(config.corpus_dir, "corpus_dir");
    require_path(config.metadata_path, "metadata_path");
    require_path(config.schema_path, "schema_path");
    require_path(config.output_dir, "output_dir");
    if (config.workers < 1) violations.push_back("workers must satisfy workers >= 1");
    if (config.run_count < 1) violations.push_back("run count >= 1 is required");
    if (config.attempt_cap < 1) violations.push_back("attempt_cap must satisfy attempt_cap >= 1");
    const bool live = config.backend.endpoint.has_value();
    const bool mock = config.backend.mock_script_path.has_value();
    if (live == mock)
        violations.push_back("backend needs exactly one of endpoint or mock_script_path");
    if (config.backend.api_key_env.empty())
        violations.push_back("backend.api_key_env must name an environment variable");
    if (config.backend.standard.name.empty() || config.backend.large.name.empty())
        violations.push_back("backend model names must be non-empty");
    if (config.backend.standard.context_window < 1 || config.backend.large.context_window < 1)
        violations.push_back("backend context windows must be positive");
    if (config.backend.token_margin < 1.0)
        violations.push_back("backend.token_margin must be at least 1.0");
    if (config.backend.max_output_tokens < 0)
        violations.push_back("backend.max_output_tokens must be non-negative");
    if (config.backend.requests_per_minute < 0 || config.backend.tokens_per_minute < 0)
        violations.push_back("backend rate limits must be non-negative");
    if (config.backend.retry_attempts < 1)
        violations.push_back("backend.retry_attempts must be at least 1");
    if (config.backend.retry_initial_backoff_ms < 0)
        violations.push_back("backend.retry_initial_backoff_ms must be non-negative");
    if (config.temperatures.retrieve < 0.0)
        violations.push_back("temperatures.retrieve must be non-negative");
    if (config.temperatures.cluster <= 0.0)
        violations.push_back("temperatures.cluster must be positive");
    if (config.temperatures.recluster <= 0.0)
        violations.push_back("temperatures.recluster must be positive: re-run variability is "
                             "the confidence signal");
    if (config.machine_evaluator_id.empty())
        violations.push_back("machine_evaluator_id must be non-empty");
    return violations;
}

struct ConfigResult {
    PipelineConfig config;
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& value) {
    std::filesystem::path p = value;
    return p.is_absolute() ? p : base / p;
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& key, T& target,
                std::vector<std::string>& violations, const std::string& scope) {
    if (!j.contains(key)) return;
    try {
        target = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        violations.push_back(scope + key + " has the wrong type");
    }
}

inline void check_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                               std::vector<std::string>& violations, const std::string& scope) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) violations.push_back("unknown key " + scope + key);
}

}  // namespace detail

// Parses config JSON; relative paths resolve against `base_dir` (the config file's
// directory). Collects type errors, unknown keys, and invariant violations together.
inline ConfigResult parse_config(const nlohmann::json& j,
                                 const std::filesystem::path& base_dir) {
    ConfigResult result;
    PipelineConfig& config = result.config;
    std::vector<std::string>& violations = result.violations;
    if (!j.is_object()) {
        violations.push_back("config root must be a JSON object");
        return result;
    }
    detail::check_unknown_keys(
        j,
        {"corpus_dir", "metadata_path", "schema_path", "output_dir", "workers", "run_count",
         "attempt_cap", "seed", "backend", "temperatures", "evaluator_label_paths",
         "machine_evaluator_id"},
        violations, "");

    std::string corpus_dir, metadata_path, schema_path, output_dir;
    detail::read_field(j, "corpus_dir", corpus_dir, violations, "");
    detail::read_field(j, "metadata_path", metadata_path, violations, "");
    detail::read_field(j, "schema_path", schema_path, violations, "");
    detail::read_field(j, "output_dir", output_dir, violations, "");
    if (!corpus_dir.empty()) config.corpus_dir = detail::resolve(base_dir, corpus_dir);
    if (!metadata_path.empty()) config.metadata_path = detail::resolve(base_dir, metadata_path);
    if (!schema_path.empty()) config.schema_path = detail::resolve(base_dir, schema_path);
    if (!output_dir.empty()) config.output_dir = detail::resolve(base_dir, output_dir);
    detail::read_field(j, "workers", config.workers, violations, "");
    detail::read_field(j, "run_count", config.run_count, violations, "");
    detail::read_field(j, "attempt_cap", config.attempt_cap, violations, "");
    detail::read_field(j, "seed", config.seed, violations, "");
    detail::read_field(j, "machine_evaluator_id", config.machine_evaluator_id, violations, "");

    if (j.contains("evaluator_label_paths")) {
        std::vector<std::string> paths;
        detail::read_field(j, "evaluator_label_paths", paths, violations, "");
        for (const auto& p : paths)
            config.evaluator_label_paths.push_back(detail::resolve(base_dir, p));
    }

    if (j.contains("temperatures")) {
        const auto& t = j.at("temperatures");
        if (!t.is_object()) {
            violations.push_back("temperatures must be an object");
        } else {
            detail::check_unknown_keys(t, {"retrieve", "cluster", "recluster"}, violations,
                                       "temperatures.");
            detail::read_field(t, "retrieve", config.temperatures.retrieve, violations,
                               "temperatures.");
            detail::read_field(t, "cluster", config.temperatures.cluster, violations,
                               "temperatures.");
            detail::read_field(t, "recluster", config.temperatures.recluster, violations,
                               "temperatures.");
        }
    }

    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        if (!b.is_object()) {
            violations.push_back("backend must be an object");
        } else {
            if (b.contains("api_key"))
                violations.push_back("backend.api_key is not allowed: keys come from the "
                                     "environment variable named by api_key_env");
            detail::check_unknown_keys(
                b,
                {"endpoint", "mock_script_path", "api_key_env", "standard_model",
                 "standard_context_window", "large_model", "large_context_window",
                 "token_margin", "max_output_tokens", "requests_per_minute",
                 "tokens_per_minute", "retry_attempts", "retry_initial_backoff_ms"},
                violations, "backend.");
            std::string endpoint, mock_script;
            detail::read_field(b, "endpoint", endpoint, violations, "backend.");
            detail::read_field(b, "mock_script_path", mock_script, violations, "backend.");
            if (!endpoint.empty()) config.backend.endpoint = endpoint;
            if (!mock_script.empty())
                config.backend.mock_script_path =
                    detail::resolve(base_dir, mock_script).string();
            detail::read_field(b, "api_key_env", config.backend.api_key_env, violations,
                               "backend.");
            detail::read_field(b, "standard_model", config.backend.standard.name, violations,
                               "backend.");
            detail::read_field(b, "standard_context_window",
                               config.backend.standard.context_window, violations, "backend.");
            detail::read_field(b, "large_model", config.backend.large.name, violations,
                               "backend.");
            detail::read_field(b, "large_context_window", config.backend.large.context_window,
                               violations, "backend.");
            detail::read_field(b, "token_margin", config.backend.token_margin, violations,
                               "backend.");
            detail::read_field(b, "max_output_tokens", config.backend.max_output_tokens,
                               violations, "backend.");
            detail::read_field(b, "requests_per_minute", config.backend.requests_per_minute,
                               violations, "backend.");
            detail::read_field(b, "tokens_per_minute", config.backend.tokens_per_minute,
                               violations, "backend.");
            detail::read_field(b, "retry_attempts", config.backend.retry_attempts, violations,
                               "backend.");
            detail::read_field(b, "retry_initial_backoff_ms",
                               config.backend.retry_initial_backoff_ms, violations, "backend.");
        }
    }

    auto invariants = validate_config(config);
    violations.insert(violations.end(), invariants.begin(), invariants.end());
    return result;
}

inline ConfigResult load_config(const std::filesystem::path& path) {
    ConfigResult result;
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        result.violations.push_back(e.what());
        return result;
    }
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) {
        result.violations.push_back("config is not valid JSON: " + path.string());
        return result;
    }
    return parse_config(j, path.parent_path());
}

}  // namespace racer::config
