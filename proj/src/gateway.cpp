#include "kicrank/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "kicrank/errors.hpp"
#include "kicrank/hash.hpp"

namespace kicrank {

using nlohmann::json;

std::string_view to_string(BackendKind b) {
    switch (b) {
        case BackendKind::Http:
            return "http";
        case BackendKind::Identity:
            return "identity";
        case BackendKind::Oracle:
            return "oracle";
        case BackendKind::Scripted:
            return "scripted";
    }
    return "identity";
}

BackendKind parse_backend(std::string_view tag) {
    if (tag == "http") return BackendKind::Http;
    if (tag == "identity") return BackendKind::Identity;
    if (tag == "oracle") return BackendKind::Oracle;
    if (tag == "scripted") return BackendKind::Scripted;
    throw ConfigError("unknown backend: " + std::string(tag));
}

std::string chat_request_body(const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.text}});
    }
    // Keys in fixed order so the body (and the cache key) is stable.
    json body = json::object();
    body["model"] = request.model;
    body["messages"] = std::move(messages);
    body["temperature"] = request.sampling.temperature;
    body["top_p"] = request.sampling.top_p;
    body["presence_penalty"] = request.sampling.presence_penalty;
    body["frequency_penalty"] = request.sampling.frequency_penalty;
    return body.dump();
}

std::string parse_chat_response(std::string_view body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw GatewayError(std::string("malformed chat-completion body: ") + e.what());
    }
    try {
        return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw GatewayError("chat-completion body has no choices[0].message.content: " +
                           std::string(body.substr(0, 200)));
    }
}

std::string cache_key(const ChatRequest& request) { return sha256_hex(chat_request_body(request)); }

namespace {

bool final_stage(Stage s) { return s == Stage::FinalQuery || s == Stage::Trivial; }

std::string linear_score(std::size_t index, std::size_t count, double top) {
    return fmt::format("{:.6f}", top * static_cast<double>(count - index) / static_cast<double>(count));
}

}  // namespace

std::string IdentityBackend::complete(const ChatRequest& request) {
    const auto& h = request.hints;
    if (!final_stage(h.stage) || h.candidate_names.empty()) return "Okay.";
    if (h.mode == InteractionMode::Sort) return format_sort_response(h.candidate_names);
    const auto i = h.scoring_index.value_or(0);
    return linear_score(i, h.candidate_names.size(), 100.0);
}

std::string OracleBackend::complete(const ChatRequest& request) {
    const auto& h = request.hints;
    if (!final_stage(h.stage) || h.candidate_names.empty()) return "Okay.";
    std::vector<bool> truth(h.candidate_names.size(), false);
    if (auto it = answers_.find(h.query_key); it != answers_.end()) {
        for (std::size_t i = 0; i < std::min(truth.size(), h.candidate_ids.size()); ++i) {
            truth[i] = std::find(it->second.begin(), it->second.end(), h.candidate_ids[i]) != it->second.end();
        }
    }
    if (h.mode == InteractionMode::Sort) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < h.candidate_names.size(); ++i) {
            if (truth[i]) names.push_back(h.candidate_names[i]);
        }
        for (std::size_t i = 0; i < h.candidate_names.size(); ++i) {
            if (!truth[i]) names.push_back(h.candidate_names[i]);
        }
        return format_sort_response(names);
    }
    const auto i = h.scoring_index.value_or(0);
    if (i < truth.size() && truth[i]) return "100";
    return linear_score(i, h.candidate_names.size(), 50.0);
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {
    if (replies_.empty()) throw ConfigError("scripted backend needs at least one reply");
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read scripted transcript: " + path.string());
    std::vector<std::string> replies;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            replies.push_back(json::parse(line).at("response").get<std::string>());
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return std::make_unique<ScriptedBackend>(std::move(replies));
}

std::string ScriptedBackend::complete(const ChatRequest&) {
    std::lock_guard lock(mutex_);
    const auto& reply = replies_[next_];
    next_ = (next_ + 1) % replies_.size();
    return reply;
}

HttpBackend::HttpBackend(GatewayConfig config, HttpTransport transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

std::string HttpBackend::complete(const ChatRequest& request) {
    const auto response = transport_(chat_request_body(request));
    if (response.status == 429 || response.status >= 500) {
        throw TransientGatewayError(fmt::format("HTTP {} from {}", response.status, config_.endpoint));
    }
    if (response.status < 200 || response.status >= 300) {
        throw GatewayError(
            fmt::format("HTTP {} from {}: {}", response.status, config_.endpoint, response.body.substr(0, 300)));
    }
    return parse_chat_response(response.body);
}

std::unique_ptr<Backend> make_backend(const GatewayConfig& config, AnswerTable oracle_answers) {
    switch (config.backend) {
        case BackendKind::Http:
            return std::make_unique<HttpBackend>(config, make_http_transport(config));
        case BackendKind::Identity:
            return std::make_unique<IdentityBackend>();
        case BackendKind::Oracle:
            return std::make_unique<OracleBackend>(std::move(oracle_answers));
        case BackendKind::Scripted:
            if (config.script_path.empty()) throw ConfigError("scripted backend needs gateway.script_path");
            return ScriptedBackend::from_file(config.script_path);
    }
    throw ConfigError("unknown backend");
}

Gateway::Gateway(GatewayConfig config, std::unique_ptr<Backend> backend, SleepFn sleep)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      sleep_(sleep ? std::move(sleep) : SleepFn([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); })),
      jitter_rng_(Rng::substream(0, "gateway.jitter")) {
    if (!backend_) throw ConfigError("gateway needs a backend");
    if (config_.max_in_flight == 0) throw ConfigError("gateway.max_in_flight must be positive");
    if (config_.retry.max_attempts < 1) throw ConfigError("gateway.retry.max_attempts must be at least 1");
}

std::string Gateway::complete(std::vector<Message> messages, RequestHints hints) {
    return complete(ChatRequest{config_.model, std::move(messages), config_.sampling, std::move(hints)});
}

std::string Gateway::complete(const ChatRequest& request) {
    const auto body = chat_request_body(request);
    const auto key = sha256_hex(body);
    {
        std::lock_guard lock(stats_mutex_);
        ++stats_.requests;
    }
    {
        std::lock_guard lock(cache_mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            std::lock_guard stats_lock(stats_mutex_);
            ++stats_.cache_hits;
            return it->second.response;
        }
    }
    auto response = call_with_retries(request);
    std::lock_guard lock(cache_mutex_);
    cache_.try_emplace(key, CacheRecord{key, body, response, static_cast<std::int64_t>(std::time(nullptr))});
    return response;
}

std::string Gateway::call_with_retries(const ChatRequest& request) {
    double backoff = config_.retry.initial_backoff_seconds;
    for (int attempt = 1;; ++attempt) {
        {
            std::unique_lock lock(flight_mutex_);
            flight_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
            ++in_flight_;
            std::lock_guard stats_lock(stats_mutex_);
            ++stats_.backend_calls;
            stats_.max_in_flight_observed = std::max(stats_.max_in_flight_observed, in_flight_);
        }
        auto release = [&] {
            {
                std::lock_guard lock(flight_mutex_);
                --in_flight_;
            }
            flight_cv_.notify_one();
        };
        try {
            auto reply = backend_->complete(request);
            release();
            return reply;
        } catch (const TransientGatewayError& e) {
            release();
            if (attempt >= config_.retry.max_attempts) {
                throw GatewayError(fmt::format("giving up after {} attempts: {}", attempt, e.what()));
            }
            double factor = 1.0;
            {
                std::lock_guard lock(stats_mutex_);
                ++stats_.retries;
                factor += config_.retry.jitter * (2.0 * jitter_rng_.uniform_real() - 1.0);
            }
            const double wait = backoff * factor;
            spdlog::warn("transient gateway failure (attempt {}/{}): {}; retrying in {:.2f}s", attempt,
                         config_.retry.max_attempts, e.what(), wait);
            sleep_(std::chrono::duration<double>(wait));
            backoff *= config_.retry.multiplier;
        } catch (...) {
            release();
            throw;
        }
    }
}

std::size_t Gateway::load_cache(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return 0;
    std::size_t loaded = 0;
    std::string line;
    std::size_t lineno = 0;
    std::lock_guard lock(cache_mutex_);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto doc = json::parse(line);
            CacheRecord rec{doc.at("key").get<std::string>(), doc.at("request").get<std::string>(),
                            doc.at("response").get<std::string>(), doc.at("timestamp").get<std::int64_t>()};
            if (sha256_hex(rec.request) != rec.key) throw std::runtime_error("key does not match request");
            cache_.insert_or_assign(rec.key, std::move(rec));
            ++loaded;
        } catch (const std::exception& e) {
            spdlog::warn("{}:{}: skipping corrupt cache record ({})", path.string(), lineno, e.what());
        }
    }
    return loaded;
}

std::size_t Gateway::flush_cache(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    std::lock_guard lock(cache_mutex_);
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw GatewayError("cannot write cache file: " + path.string());
        for (const auto& [key, rec] : cache_) {
            json doc = json::object();
            doc["key"] = rec.key;
            doc["request"] = rec.request;
            doc["response"] = rec.response;
            doc["timestamp"] = rec.timestamp;
            out << doc.dump() << '\n';
        }
        if (!out) throw GatewayError("failed writing cache file: " + path.string());
    }
    std::filesystem::rename(tmp, path);
    return cache_.size();
}

std::size_t Gateway::cache_size() const {
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
}

GatewayStats Gateway::stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
}

}  // namespace kicrank
