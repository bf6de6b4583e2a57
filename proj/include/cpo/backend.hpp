#pragma once

// Text-generation backends. Everything the search needs from a model goes
// through Backend::generate; the scripted backend replays recorded
// completions keyed by prompt fingerprint and sample seed.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cpo/core.hpp"
#include "cpo/json_io.hpp"

namespace cpo {

class BackendError : public Error {
public:
    using Error::Error;
};

/// Transport failure after the retry budget is spent.
class NetworkError : public BackendError {
public:
    using BackendError::BackendError;
};

/// The server answered with something we cannot interpret.
class ProtocolError : public BackendError {
public:
    using BackendError::BackendError;
};

/// The scripted backend has no completion for the request. Always a
/// test-setup bug.
class ScriptMiss : public BackendError {
public:
    using BackendError::BackendError;
};

enum class FinishReason { Stop, Length, Error };

inline std::string_view to_string(FinishReason r) {
    switch (r) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        case FinishReason::Error: return "error";
    }
    return "?";
}

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;
    std::vector<std::string> stop_sequences;
    int max_new_tokens = 256;
    std::uint64_t sample_seed = 0;
};

struct GenerationResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    double elapsed_seconds = 0.0;
};

struct StopMatch {
    std::string text;
    bool stopped = false;
};

/// Cuts `raw` at the earliest occurrence of any stop sequence (the stop
/// sequence itself is dropped).
inline StopMatch truncate_at_stop(std::string_view raw, const std::vector<std::string>& stops) {
    std::size_t cut = std::string_view::npos;
    for (const auto& s : stops) {
        if (s.empty()) continue;
        const auto pos = raw.find(s);
        if (pos < cut) cut = pos;
    }
    if (cut == std::string_view::npos) return {std::string(raw), false};
    return {std::string(raw.substr(0, cut)), true};
}

/// Backends must tolerate concurrent generate() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) = 0;
    virtual std::string descriptor() const = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// 64-bit hash of the prompt after whitespace runs are collapsed.
inline std::uint64_t prompt_fingerprint(std::string_view prompt) {
    return fnv1a64(normalize_whitespace(prompt));
}

struct ScriptEntry {
    std::uint64_t fingerprint = 0;
    std::uint64_t seed = 0;
    std::string text;
};

class ScriptedBackend : public Backend {
public:
    ScriptedBackend() = default;
    explicit ScriptedBackend(const std::vector<ScriptEntry>& entries) {
        for (const auto& e : entries) add(e);
    }

    void add(const ScriptEntry& e) {
        std::unique_lock lock(mutex_);
        script_[{e.fingerprint, e.seed}] = e.text;
    }

    void add(std::string_view prompt, std::uint64_t seed, std::string text) {
        add(ScriptEntry{prompt_fingerprint(prompt), seed, std::move(text)});
    }

    std::optional<std::string> lookup(std::string_view prompt, std::uint64_t seed) const {
        std::shared_lock lock(mutex_);
        const auto it = script_.find({prompt_fingerprint(prompt), seed});
        if (it == script_.end()) return std::nullopt;
        return it->second;
    }

    GenerationResponse generate(const GenerationRequest& request) override {
        const auto start = std::chrono::steady_clock::now();
        if (request.prompt.empty()) throw InvalidArgument("empty prompt");
        auto raw = lookup(request.prompt, request.sample_seed);
        if (!raw)
            throw ScriptMiss("no scripted completion for fingerprint " +
                             hex64(prompt_fingerprint(request.prompt)) + " seed " +
                             std::to_string(request.sample_seed));
        auto match = truncate_at_stop(*raw, request.stop_sequences);
        GenerationResponse r;
        r.text = std::move(match.text);
        r.finish_reason = match.stopped ? FinishReason::Stop : FinishReason::Length;
        r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    }

    std::string descriptor() const override { return "scripted:" + std::to_string(size()) + " entries"; }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return script_.size();
    }

    std::vector<ScriptEntry> entries() const {
        std::shared_lock lock(mutex_);
        std::vector<ScriptEntry> out;
        out.reserve(script_.size());
        for (const auto& [key, text] : script_) out.push_back({key.first, key.second, text});
        return out;
    }

private:
    mutable std::shared_mutex mutex_;
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::string> script_;
};

// Script files: one {fingerprint, seed, text} per line, fingerprint as 16
// lowercase hex digits.

inline std::string encode_script(const std::vector<ScriptEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        out += Json{{"fingerprint", hex64(e.fingerprint)}, {"seed", e.seed}, {"text", e.text}}.dump();
        out.push_back('\n');
    }
    return out;
}

inline std::vector<ScriptEntry> decode_script(std::string_view text) {
    std::vector<ScriptEntry> out;
    for (const auto& line : split_lines(text)) {
        const auto j = parse_json(line, "ScriptEntry");
        detail::check_fields(j, "ScriptEntry", {"fingerprint", "seed", "text"});
        const auto fp = detail::get_as<std::string>(j, "fingerprint", "ScriptEntry");
        ScriptEntry e;
        try {
            std::size_t used = 0;
            e.fingerprint = std::stoull(fp, &used, 16);
            if (used != fp.size() || fp.size() != 16) throw std::invalid_argument(fp);
        } catch (const std::logic_error&) {
            throw FormatError("ScriptEntry: fingerprint must be 16 hex digits, got '" + fp + "'");
        }
        e.seed = detail::get_as<std::uint64_t>(j, "seed", "ScriptEntry");
        e.text = detail::get_as<std::string>(j, "text", "ScriptEntry");
        out.push_back(std::move(e));
    }
    return out;
}

/// Answers from a function of (prompt, seed). Used by the synthetic task and
/// by randomized tests.
class FunctionBackend : public Backend {
public:
    using Responder = std::function<std::optional<std::string>(std::string_view prompt, std::uint64_t seed)>;

    FunctionBackend(Responder responder, std::string name)
        : responder_(std::move(responder)), name_(std::move(name)) {}

    GenerationResponse generate(const GenerationRequest& request) override {
        const auto start = std::chrono::steady_clock::now();
        if (request.prompt.empty()) throw InvalidArgument("empty prompt");
        auto raw = responder_(request.prompt, request.sample_seed);
        if (!raw) throw ScriptMiss("responder declined prompt " + hex64(prompt_fingerprint(request.prompt)));
        auto match = truncate_at_stop(*raw, request.stop_sequences);
        GenerationResponse r{std::move(match.text), match.stopped ? FinishReason::Stop : FinishReason::Length, 0.0};
        r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    }

    std::string descriptor() const override { return name_; }

private:
    Responder responder_;
    std::string name_;
};

/// Runs a responder and keeps every raw (pre-stop) completion it produced,
/// so the run can be replayed later through ScriptedBackend.
class RecordingBackend : public Backend {
public:
    explicit RecordingBackend(FunctionBackend::Responder responder, std::string name = "recording")
        : inner_(
              [this, responder = std::move(responder)](std::string_view prompt,
                                                       std::uint64_t seed) -> std::optional<std::string> {
                  auto out = responder(prompt, seed);
                  if (out) recorded_.add(prompt, seed, *out);
                  return out;
              },
              std::move(name)) {}
    RecordingBackend(const RecordingBackend&) = delete;
    RecordingBackend& operator=(const RecordingBackend&) = delete;

    GenerationResponse generate(const GenerationRequest& request) override { return inner_.generate(request); }
    std::string descriptor() const override { return inner_.descriptor(); }

    const ScriptedBackend& recorded() const { return recorded_; }

private:
    ScriptedBackend recorded_;
    FunctionBackend inner_;
};

// ---------------------------------------------------------------------------
// Batched generation
// ---------------------------------------------------------------------------

enum class BackendErrorKind { None, Network, Protocol, ScriptMiss, Other };

struct BatchSlot {
    std::optional<GenerationResponse> response;
    BackendErrorKind error_kind = BackendErrorKind::None;
    std::string error;

    bool ok() const { return response.has_value(); }
};

struct BatchResult {
    std::vector<BatchSlot> slots;
    double wall_seconds = 0.0;
};

inline BatchSlot generate_one(Backend& backend, const GenerationRequest& request) {
    BatchSlot slot;
    try {
        slot.response = backend.generate(request);
    } catch (const NetworkError& e) {
        slot.error_kind = BackendErrorKind::Network;
        slot.error = e.what();
    } catch (const ProtocolError& e) {
        slot.error_kind = BackendErrorKind::Protocol;
        slot.error = e.what();
    } catch (const ScriptMiss& e) {
        slot.error_kind = BackendErrorKind::ScriptMiss;
        slot.error = e.what();
    } catch (const std::exception& e) {
        slot.error_kind = BackendErrorKind::Other;
        slot.error = e.what();
    }
    return slot;
}

/// Runs requests on up to `parallelism` threads. Output order matches input
/// order; failures stay in their slot.
inline BatchResult generate_batch(Backend& backend, const std::vector<GenerationRequest>& requests,
                                  int parallelism = 1) {
    if (parallelism < 1) throw InvalidArgument("parallelism must be >= 1");
    const auto start = std::chrono::steady_clock::now();
    BatchResult result;
    result.slots.resize(requests.size());
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(parallelism), requests.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < requests.size(); ++i) result.slots[i] = generate_one(backend, requests[i]);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (auto i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1))
                    result.slots[i] = generate_one(backend, requests[i]);
            });
        }
    }
    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace cpo
