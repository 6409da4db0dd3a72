#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "racer/common.hpp"

namespace racer::llm {

enum class ModelHint { Standard, LargeContext };

inline std::string to_string(ModelHint h) {
    return h == ModelHint::Standard ? "standard" : "large-context";
}

struct CompletionRequest {
    std::string prompt;
    double temperature = 1.0;
    int max_output_tokens = 2048;
    std::string tag;  // stage + subject/question identifiers, keys the replay log
};

struct CompletionResult {
    std::string text;  // raw model output, downstream parsers own interpretation
    std::string backend_id;
    int token_estimate_in = 0;
    int token_estimate_out = 0;
    int retry_count = 0;
    bool truncated = false;
    std::chrono::milliseconds latency{0};  // diagnostic only, never persisted
};

struct BackendReply {
    std::string text;
    bool truncated = false;
};

struct TransportError {
    std::string message;
    bool retryable = false;
};

class Backend {
  public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual Result<BackendReply, TransportError> send(const std::string& model,
                                                      const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// scripted mock backend

/// Ordered canned responses per request tag; "*" matches any tag once the
/// tag's own queue is empty. Purely in-memory, never touches the network.
struct BackendScript {
    std::map<std::string, std::deque<std::string>> queues;

    static BackendScript from_json(const nlohmann::json& j) {
        BackendScript script;
        if (!j.contains("responses") || !j["responses"].is_array())
            throw std::runtime_error("mock script: missing \"responses\" array");
        for (const auto& entry : j["responses"]) {
            script.queues[entry.at("tag").get<std::string>()].push_back(
                entry.at("body").get<std::string>());
        }
        return script;
    }

    static BackendScript load(const std::filesystem::path& path) {
        try {
            return from_json(nlohmann::json::parse(read_file(path)));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("mock script " + path.string() + ": " + e.what());
        }
    }
};

class ScriptedBackend : public Backend {
  public:
    explicit ScriptedBackend(BackendScript script) : script_(std::move(script)) {}

    std::string id() const override { return "scripted"; }

    Result<BackendReply, TransportError> send(const std::string&,
                                              const CompletionRequest& request) override {
        std::lock_guard lock(mutex_);
        auto it = script_.queues.find(request.tag);
        if (it == script_.queues.end() || it->second.empty()) it = script_.queues.find("*");
        if (it == script_.queues.end() || it->second.empty())
            return TransportError{"mock script exhausted for tag \"" + request.tag + "\"", false};
        BackendReply reply{it->second.front(), false};
        it->second.pop_front();
        return reply;
    }

    size_t remaining() const {
        std::lock_guard lock(mutex_);
        size_t n = 0;
        for (const auto& [_, q] : script_.queues) n += q.size();
        return n;
    }

  private:
    mutable std::mutex mutex_;
    BackendScript script_;
};

// ---------------------------------------------------------------------------
// replay

struct ReplayEntry {
    std::string tag;
    std::string prompt_hash;  // fnv1a64 of the prompt, hex
    std::string response;
};

inline std::string replay_key(const std::string& tag, const std::string& prompt) {
    return tag + "\x1f" + to_hex(fnv1a64(prompt));
}

inline void append_replay_entry(const std::filesystem::path& log_path, const std::string& tag,
                                const std::string& prompt, const std::string& response) {
    nlohmann::json j{{"tag", tag}, {"prompt_hash", to_hex(fnv1a64(prompt))}, {"response", response}};
    append_file(log_path, j.dump() + "\n");
}

inline std::vector<ReplayEntry> load_replay_log(const std::filesystem::path& path) {
    std::vector<ReplayEntry> entries;
    for (const std::string& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        entries.push_back(ReplayEntry{j.at("tag").get<std::string>(),
                                      j.at("prompt_hash").get<std::string>(),
                                      j.at("response").get<std::string>()});
    }
    return entries;
}

/// Serves a previous run's responses keyed by (tag, prompt hash), in recorded
/// order for repeated keys. A miss is a hard error: replay never invents data.
class ReplayBackend : public Backend {
  public:
    explicit ReplayBackend(const std::vector<ReplayEntry>& entries) {
        for (const auto& e : entries) queues_[e.tag + "\x1f" + e.prompt_hash].push_back(e.response);
    }

    static ReplayBackend from_log(const std::filesystem::path& path) {
        return ReplayBackend(load_replay_log(path));
    }

    std::string id() const override { return "replay"; }

    Result<BackendReply, TransportError> send(const std::string&,
                                              const CompletionRequest& request) override {
        std::lock_guard lock(mutex_);
        auto it = queues_.find(replay_key(request.tag, request.prompt));
        if (it == queues_.end() || it->second.empty())
            return TransportError{"replay log has no response for tag \"" + request.tag + "\"",
                                  false};
        BackendReply reply{it->second.front(), false};
        it->second.pop_front();
        return reply;
    }

  private:
    std::mutex mutex_;
    std::map<std::string, std::deque<std::string>> queues_;
};

// ---------------------------------------------------------------------------
// rate limiting

using Clock = std::function<std::chrono::steady_clock::time_point()>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Clock system_clock_fn() {
    return [] { return std::chrono::steady_clock::now(); };
}
inline Sleeper system_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Sliding one-minute window over requests and estimated tokens. Admission is
/// serialized; zero limits mean unlimited. A single request larger than the
/// token budget is admitted alone rather than deadlocking.
class RateLimiter {
  public:
    RateLimiter(int requests_per_minute, long tokens_per_minute,
                Clock clock = system_clock_fn(), Sleeper sleeper = system_sleeper())
        : rpm_(requests_per_minute),
          tpm_(tokens_per_minute),
          clock_(std::move(clock)),
          sleep_(std::move(sleeper)) {}

    /// Blocks until the request may proceed; returns the total wait.
    std::chrono::milliseconds admit(long tokens) {
        using namespace std::chrono;
        milliseconds waited{0};
        std::unique_lock lock(mutex_);
        for (;;) {
            auto now = clock_();
            auto cutoff = now - minutes(1);
            while (!window_.empty() && window_.front().first <= cutoff) {
                window_tokens_ -= window_.front().second;
                window_.pop_front();
            }
            bool requests_ok = rpm_ <= 0 || static_cast<int>(window_.size()) < rpm_;
            bool tokens_ok = tpm_ <= 0 || window_tokens_ + tokens <= tpm_ || window_.empty();
            if (requests_ok && tokens_ok) {
                window_.emplace_back(now, tokens);
                window_tokens_ += tokens;
                return waited;
            }
            auto wake = window_.front().first + minutes(1);
            auto delay = std::max(duration_cast<milliseconds>(wake - now), milliseconds(1));
            lock.unlock();
            sleep_(delay);
            waited += delay;
            lock.lock();
        }
    }

  private:
    int rpm_;
    long tpm_;
    Clock clock_;
    Sleeper sleep_;
    std::mutex mutex_;
    std::deque<std::pair<std::chrono::steady_clock::time_point, long>> window_;
    long window_tokens_ = 0;
};

// ---------------------------------------------------------------------------
// client: model selection, retries, replay logging

/// Conservative character-count heuristic; the margin inflates the estimate.
/// The epsilon absorbs float noise at exact whole-token products.
inline int estimate_tokens(std::string_view text, double margin = 1.1) {
    double raw = static_cast<double>(text.size()) / 4.0 * margin;
    return static_cast<int>(std::ceil(raw - 1e-9));
}

struct ModelSpec {
    std::string name;
    int context_window = 0;
};

struct RetryPolicy {
    int attempts = 5;
    std::chrono::milliseconds initial_backoff{1000};
};

struct CompletionError {
    enum class Kind { InvalidRequest, Oversize, Transport };
    Kind kind;
    std::string message;
};

struct LlmClientOptions {
    ModelSpec standard{"gpt-4", 8192};
    ModelSpec large{"gpt-4-32k", 32768};
    double token_margin = 1.1;
    RetryPolicy retry;
    int requests_per_minute = 0;
    long tokens_per_minute = 0;
    std::filesystem::path replay_log_path;  // empty disables logging
    Clock clock = system_clock_fn();
    Sleeper sleeper = system_sleeper();
};

class LlmClient {
  public:
    LlmClient(std::shared_ptr<Backend> backend, LlmClientOptions options)
        : backend_(std::move(backend)),
          options_(options),
          limiter_(options.requests_per_minute, options.tokens_per_minute, options.clock,
                   options.sleeper) {}

    /// Standard model unless the estimated prompt + response budget does not
    /// fit its window; oversize when even the large window is too small.
    Result<ModelHint, CompletionError> select_model(std::string_view prompt,
                                                    int max_output_tokens) const {
        long needed = estimate_tokens(prompt, options_.token_margin) + max_output_tokens;
        if (needed <= options_.standard.context_window) return ModelHint::Standard;
        if (needed <= options_.large.context_window) return ModelHint::LargeContext;
        return CompletionError{CompletionError::Kind::Oversize,
                               "prompt needs ~" + std::to_string(needed) +
                                   " tokens, above the large-context window of " +
                                   std::to_string(options_.large.context_window)};
    }

    Result<CompletionResult, CompletionError> complete(const CompletionRequest& request) {
        if (request.prompt.empty())
            return CompletionError{CompletionError::Kind::InvalidRequest, "empty prompt"};
        if (request.temperature < 0.0)
            return CompletionError{CompletionError::Kind::InvalidRequest,
                                   "negative sampling temperature"};
        auto hint = select_model(request.prompt, request.max_output_tokens);
        if (!hint.ok()) return hint.error();
        const ModelSpec& model =
            hint.value() == ModelHint::Standard ? options_.standard : options_.large;

        int estimate_in = estimate_tokens(request.prompt, options_.token_margin);
        limiter_.admit(estimate_in + request.max_output_tokens);

        auto backoff = options_.retry.initial_backoff;
        int attempts = std::max(options_.retry.attempts, 1);
        auto started = options_.clock();
        for (int attempt = 0;; ++attempt) {
            auto reply = backend_->send(model.name, request);
            if (reply.ok()) {
                CompletionResult result;
                result.text = reply.value().text;
                result.backend_id = model.name;
                result.token_estimate_in = estimate_in;
                result.token_estimate_out =
                    estimate_tokens(reply.value().text, options_.token_margin);
                result.retry_count = attempt;
                result.truncated = reply.value().truncated;
                result.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                    options_.clock() - started);
                if (!options_.replay_log_path.empty()) {
                    std::lock_guard lock(log_mutex_);
                    append_replay_entry(options_.replay_log_path, request.tag, request.prompt,
                                        result.text);
                }
                return result;
            }
            const TransportError& err = reply.error();
            if (!err.retryable || attempt + 1 >= attempts)
                return CompletionError{CompletionError::Kind::Transport,
                                       err.message + " (after " + std::to_string(attempt + 1) +
                                           " attempt(s))"};
            options_.sleeper(backoff);
            backoff *= 2;
        }
    }

  private:
    std::shared_ptr<Backend> backend_;
    LlmClientOptions options_;
    RateLimiter limiter_;
    std::mutex log_mutex_;
};

}  // namespace racer::llm
