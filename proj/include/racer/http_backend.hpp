#pragma once

#include <httplib.h>
#include <json.hpp>

#include "racer/llm.hpp"

namespace racer::llm {

/// OpenAI-compatible chat-completions client. The key lives in memory only;
/// it goes into the Authorization header and nowhere else.
class HttpBackend : public Backend {
  public:
    HttpBackend(std::string base_url, std::string api_key)
        : base_url_(std::move(base_url)), api_key_(std::move(api_key)) {}

    std::string id() const override { return "http:" + base_url_; }

    Result<BackendReply, TransportError> send(const std::string& model,
                                              const CompletionRequest& request) override {
        nlohmann::json payload{
            {"model", model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens},
        };
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        // one client per call: httplib clients are not safe for concurrent use
        httplib::Client client(base_url_);
        client.set_connection_timeout(30);
        client.set_read_timeout(600);
        auto res = client.Post("/v1/chat/completions", headers, payload.dump(),
                               "application/json");
        if (!res)
            return TransportError{"connection to " + base_url_ + " failed: " +
                                      httplib::to_string(res.error()),
                                  true};
        if (res->status == 429 || res->status >= 500)
            return TransportError{"HTTP " + std::to_string(res->status) + " from backend", true};
        if (res->status != 200)
            return TransportError{"HTTP " + std::to_string(res->status) + " from backend: " +
                                      res->body,
                                  false};
        try {
            nlohmann::json j = nlohmann::json::parse(res->body);
            const auto& choice = j.at("choices").at(0);
            BackendReply reply;
            reply.text = choice.at("message").at("content").get<std::string>();
            reply.truncated = choice.value("finish_reason", "") == "length";
            return reply;
        } catch (const nlohmann::json::exception& e) {
            return TransportError{std::string("malformed completion response: ") + e.what(), false};
        }
    }

  private:
    std::string base_url_;
    std::string api_key_;
};

}  // namespace racer::llm
