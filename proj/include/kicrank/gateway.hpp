#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kicrank/prompt.hpp"
#include "kicrank/rng.hpp"

namespace kicrank {

enum class BackendKind { Http, Identity, Oracle, Scripted };
std::string_view to_string(BackendKind b);
BackendKind parse_backend(std::string_view tag);

struct SamplingParams {
    double temperature = 0.0;
    double top_p = 1.0;
    double presence_penalty = 0.0;
    double frequency_penalty = 0.0;

    friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

struct RetryPolicy {
    int max_attempts = 5;
    double initial_backoff_seconds = 1.0;
    double multiplier = 2.0;
    double jitter = 0.25;  // each wait is scaled by a factor in [1 - jitter, 1 + jitter]

    friend bool operator==(const RetryPolicy&, const RetryPolicy&) = default;
};

struct GatewayConfig {
    BackendKind backend = BackendKind::Identity;
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    SamplingParams sampling;
    std::size_t max_in_flight = 4;
    RetryPolicy retry;
    std::filesystem::path cache_path;  // empty: in-memory only
    std::string api_key_env = "KICRANK_API_KEY";
    double timeout_seconds = 60.0;
    // Also request a reply for every acknowledged user turn, not only the final one.
    bool intermediate_turns = true;
    std::filesystem::path script_path;  // scripted backend transcript (JSON lines)

    friend bool operator==(const GatewayConfig&, const GatewayConfig&) = default;
};

/// Side-channel metadata offline backends need to produce their reply. Not
/// part of the wire request or the cache key.
struct RequestHints {
    InteractionMode mode = InteractionMode::Sort;
    Stage stage = Stage::FinalQuery;
    std::vector<std::string> candidate_names;
    std::vector<std::string> candidate_ids;
    std::optional<std::size_t> scoring_index;
    std::string query_key;
};

struct ChatRequest {
    std::string model;
    std::vector<Message> messages;
    SamplingParams sampling;
    RequestHints hints;
};

/// Wire body: {model, messages:[{role, content}], temperature, top_p, presence_penalty, frequency_penalty}.
std::string chat_request_body(const ChatRequest& request);
/// choices[0].message.content; throws GatewayError on anything else.
std::string parse_chat_response(std::string_view body);
/// SHA-256 over the wire body, so it covers model, messages and sampling only.
std::string cache_key(const ChatRequest& request);

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

/// Echoes the candidates in the given order (sort) or with linearly
/// decreasing scores (score). Any other turn gets "Okay.".
class IdentityBackend : public Backend {
public:
    std::string complete(const ChatRequest& request) override;
};

/// Answer table keyed by RequestHints::query_key, valued by the raw ids of
/// the ground-truth entities. Truths among the candidates go first in their
/// given order (sort) or score 100 (score).
using AnswerTable = std::unordered_map<std::string, std::vector<std::string>>;

class OracleBackend : public Backend {
public:
    explicit OracleBackend(AnswerTable answers) : answers_(std::move(answers)) {}
    std::string complete(const ChatRequest& request) override;

private:
    AnswerTable answers_;
};

/// Replays a fixed list of replies in order, wrapping around.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<std::string> replies);
    /// JSON lines, each {"response": "..."}.
    static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);
    std::string complete(const ChatRequest& request) override;

private:
    std::mutex mutex_;
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// POSTs a body and returns the raw response. Throws TransientGatewayError on
/// connection failures.
using HttpTransport = std::function<HttpResponse(const std::string& body)>;

/// Transport over cpp-httplib with TLS; bearer token from the environment.
HttpTransport make_http_transport(const GatewayConfig& config);

class HttpBackend : public Backend {
public:
    HttpBackend(GatewayConfig config, HttpTransport transport);
    std::string complete(const ChatRequest& request) override;

private:
    GatewayConfig config_;
    HttpTransport transport_;
};

/// Builds the backend named in the config. The oracle backend needs its answer table.
std::unique_ptr<Backend> make_backend(const GatewayConfig& config, AnswerTable oracle_answers = {});

struct GatewayStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t backend_calls = 0;
    std::size_t retries = 0;
    std::size_t max_in_flight_observed = 0;
};

struct CacheRecord {
    std::string key;
    std::string request;  // wire body snapshot
    std::string response;
    std::int64_t timestamp = 0;  // unix seconds
};

using SleepFn = std::function<void(std::chrono::duration<double>)>;

/// Cache, retry and concurrency policy around a backend. complete() is safe
/// to call from several threads.
class Gateway {
public:
    Gateway(GatewayConfig config, std::unique_ptr<Backend> backend, SleepFn sleep = {});

    const GatewayConfig& config() const { return config_; }

    std::string complete(const ChatRequest& request);
    /// Convenience: fills model and sampling from the config.
    std::string complete(std::vector<Message> messages, RequestHints hints);

    /// Merges records from a JSON-lines file; corrupt lines are skipped with a
    /// warning. Returns the number of records loaded.
    std::size_t load_cache(const std::filesystem::path& path);
    /// Writes every record sorted by key and returns how many were written.
    std::size_t flush_cache(const std::filesystem::path& path) const;
    std::size_t cache_size() const;

    GatewayStats stats() const;

private:
    std::string call_with_retries(const ChatRequest& request);

    GatewayConfig config_;
    std::unique_ptr<Backend> backend_;
    SleepFn sleep_;

    mutable std::mutex cache_mutex_;
    std::map<std::string, CacheRecord> cache_;

    mutable std::mutex flight_mutex_;
    std::condition_variable flight_cv_;
    std::size_t in_flight_ = 0;

    mutable std::mutex stats_mutex_;
    GatewayStats stats_;
    Rng jitter_rng_;
};

}  // namespace kicrank
