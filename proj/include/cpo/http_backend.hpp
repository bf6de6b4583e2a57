#pragma once

// OpenAI-compatible /completions client.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>

#include <httplib.h>

#include "cpo/backend.hpp"

namespace cpo {

struct RetryPolicy {
    int max_attempts = 3;
    double initial_delay_seconds = 0.5;
    double multiplier = 2.0;

    /// Delay before attempt `attempt + 1`, with `attempt` counted from 1.
    double delay_after(int attempt) const {
        double d = initial_delay_seconds;
        for (int i = 1; i < attempt; ++i) d *= multiplier;
        return d;
    }
};

struct HttpBackendConfig {
    std::string endpoint;  // scheme://host[:port]
    std::string completions_path = "/v1/completions";
    std::string model;
    std::string api_key;
    double connect_timeout_seconds = 10.0;
    double read_timeout_seconds = 300.0;
    RetryPolicy retry;

    /// CPO_ENDPOINT, CPO_MODEL, CPO_API_KEY, CPO_COMPLETIONS_PATH override
    /// whatever is already set.
    void apply_environment() {
        if (const char* v = std::getenv("CPO_ENDPOINT")) endpoint = v;
        if (const char* v = std::getenv("CPO_MODEL")) model = v;
        if (const char* v = std::getenv("CPO_API_KEY")) api_key = v;
        if (const char* v = std::getenv("CPO_COMPLETIONS_PATH")) completions_path = v;
    }
};

inline Json completion_request_body(const std::string& model, const GenerationRequest& request) {
    return Json{{"model", model},
                {"prompt", request.prompt},
                {"temperature", request.temperature},
                {"max_tokens", request.max_new_tokens},
                {"stop", request.stop_sequences}};
}

/// Reads choices[0].text and choices[0].finish_reason. Stop sequences are
/// re-applied locally, since not every server honors `stop`.
inline GenerationResponse parse_completion_response(std::string_view body,
                                                    const std::vector<std::string>& stops) {
    Json j;
    try {
        j = Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw ProtocolError(std::string("malformed completion body: ") + e.what());
    }
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw ProtocolError("completion body has no choices");
    const auto& choice = j["choices"][0];
    if (!choice.is_object() || !choice.contains("text") || !choice["text"].is_string())
        throw ProtocolError("choices[0].text missing or not a string");

    auto match = truncate_at_stop(choice["text"].get<std::string>(), stops);
    GenerationResponse r;
    r.text = std::move(match.text);
    std::string reason;
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
        reason = choice["finish_reason"].get<std::string>();
    if (match.stopped || reason == "stop")
        r.finish_reason = FinishReason::Stop;
    else if (reason == "length")
        r.finish_reason = FinishReason::Length;
    else if (reason.empty())
        r.finish_reason = FinishReason::Length;
    else
        r.finish_reason = FinishReason::Error;
    return r;
}

class HttpBackend : public Backend {
public:
    using Sleeper = std::function<void(double seconds)>;

    explicit HttpBackend(HttpBackendConfig config, Sleeper sleeper = default_sleeper())
        : config_(std::move(config)), sleeper_(std::move(sleeper)) {
        if (config_.endpoint.empty()) throw InvalidArgument("http backend: endpoint not configured");
        if (config_.model.empty()) throw InvalidArgument("http backend: model not configured");
        if (config_.retry.max_attempts < 1) throw InvalidArgument("http backend: max_attempts must be >= 1");
    }

    GenerationResponse generate(const GenerationRequest& request) override {
        if (request.prompt.empty()) throw InvalidArgument("empty prompt");
        const auto start = std::chrono::steady_clock::now();
        const auto body = completion_request_body(config_.model, request).dump();

        // A client per call keeps generate() free of shared mutable state.
        httplib::Client client(config_.endpoint);
        client.set_connection_timeout(std::chrono::duration<double>(config_.connect_timeout_seconds));
        client.set_read_timeout(std::chrono::duration<double>(config_.read_timeout_seconds));
        httplib::Headers headers;
        if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

        std::string last_error;
        for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
            auto res = client.Post(config_.completions_path, headers, body, "application/json");
            if (res) {
                if (res->status < 200 || res->status >= 300)
                    throw ProtocolError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
                auto out = parse_completion_response(res->body, request.stop_sequences);
                out.elapsed_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                return out;
            }
            last_error = httplib::to_string(res.error());
            if (attempt < config_.retry.max_attempts) sleeper_(config_.retry.delay_after(attempt));
        }
        throw NetworkError("transport failure after " + std::to_string(config_.retry.max_attempts) +
                           " attempts: " + last_error);
    }

    std::string descriptor() const override { return "http:" + config_.endpoint + config_.completions_path + "#" + config_.model; }

    static Sleeper default_sleeper() {
        return [](double seconds) { std::this_thread::sleep_for(std::chrono::duration<double>(seconds)); };
    }

private:
    HttpBackendConfig config_;
    Sleeper sleeper_;
};

}  // namespace cpo
