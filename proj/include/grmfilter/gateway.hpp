#pragma once

// Chat-completion gateway: policy and judge backed by an OpenAI-style HTTP endpoint, with
// bounded retries and a JSONL audit log of every call.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "grmfilter/actors.hpp"
#include "grmfilter/core.hpp"
#include "grmfilter/dataset.hpp"
#include "grmfilter/detail/random.hpp"
#include "grmfilter/errors.hpp"

namespace grmfilter {

struct GatewayConfig {
    /// Full endpoint URL, e.g. https://api.example.com/v1/chat/completions.
    std::string url;
    std::string model;
    /// Name of the environment variable holding the API key.
    std::string api_key_env = "GRMFILTER_API_KEY";
    double timeout_s = 120.0;
    std::size_t retries = 3;
    std::size_t backoff_ms = 500;
};

inline std::vector<std::string> gateway_violations(const GatewayConfig& g) {
    std::vector<std::string> out;
    if (!std::regex_match(g.url, std::regex(R"(https?://[^/]+(/.*)?)")))
        out.push_back("gateway.url must be an http(s) URL (got '" + g.url + "')");
    if (g.model.empty()) out.push_back("gateway.model must be set");
    if (!(g.timeout_s > 0)) out.push_back("gateway.timeout_s must be positive");
    return out;
}

/// One JSON record per gateway call. Safe for concurrent use.
class AuditLog {
public:
    explicit AuditLog(const std::string& path) : out_(path, std::ios::binary | std::ios::app) {
        if (!out_) throw DatasetError("cannot open audit log '" + path + "'");
    }

    void record(std::string_view purpose, const std::string& model, const std::string& prompt,
                const std::optional<std::string>& response, const std::string& error = {}) {
        Json j{{"timestamp", now_utc()}, {"purpose", purpose}, {"model", model},
               {"prompt_sha256", sha256_hex(prompt)}};
        if (response) j["response"] = *response;
        if (!error.empty()) j["error"] = error;
        std::lock_guard lock(mutex_);
        out_ << j.dump() << '\n';
        out_.flush();
    }

private:
    static std::string now_utc() {
        auto now = std::chrono::system_clock::now();
        std::time_t t = std::chrono::system_clock::to_time_t(now);
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::ofstream out_;
    std::mutex mutex_;
};

struct ChatRequest {
    Json messages = Json::array();
    double temperature = 1.0;
    std::size_t max_tokens = 4096;
    std::optional<std::uint64_t> seed;
};

class ChatClient {
public:
    ChatClient(GatewayConfig cfg, std::shared_ptr<AuditLog> audit) : cfg_(std::move(cfg)), audit_(std::move(audit)) {
        auto v = gateway_violations(cfg_);
        if (!v.empty()) throw ConfigError(std::move(v));
        std::smatch m;
        std::regex_match(cfg_.url, m, std::regex(R"((https?://[^/]+)(/.*)?)"));
        origin_ = m[1].str();
        path_ = m[2].matched ? m[2].str() : "/";
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    }

    const GatewayConfig& config() const noexcept { return cfg_; }

    /// Returns the first choice's message content. Raises RolloutAbort once retries are spent.
    std::string complete(const ChatRequest& req, std::string_view purpose) const {
        Json body{{"model", cfg_.model},
                  {"messages", req.messages},
                  {"temperature", req.temperature},
                  {"max_tokens", req.max_tokens}};
        if (req.seed) body["seed"] = *req.seed;
        const std::string payload = body.dump();
        std::string last_error;
        for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
            try {
                std::string content = post_once(payload);
                if (audit_) audit_->record(purpose, cfg_.model, payload, content);
                return content;
            } catch (const std::exception& e) {
                last_error = e.what();
                if (audit_) audit_->record(purpose, cfg_.model, payload, std::nullopt, last_error);
            }
        }
        throw RolloutAbort("gateway " + cfg_.url + ": giving up after " + std::to_string(cfg_.retries + 1) +
                           " attempts: " + last_error);
    }

private:
    std::string post_once(const std::string& payload) const {
        httplib::Client client(origin_);
        auto timeout = std::chrono::milliseconds(static_cast<long long>(cfg_.timeout_s * 1000));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) throw std::runtime_error("transport error: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw std::runtime_error("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
        Json j = Json::parse(res->body);
        const Json& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw std::runtime_error("response has no text content");
        return content.get<std::string>();
    }

    GatewayConfig cfg_;
    std::shared_ptr<AuditLog> audit_;
    std::string origin_;
    std::string path_;
    std::string api_key_;
};

/// Chat transcript of a state: system = initial prompt, then assistant/user turns per step.
inline Json chat_messages(const State& state) {
    Json msgs = Json::array();
    msgs.push_back(Json{{"role", "system"}, {"content", state.initial_prompt}});
    for (const auto& s : state.history) {
        if (s.is_null()) break;
        msgs.push_back(Json{{"role", "assistant"}, {"content", s.action.raw_text}});
        msgs.push_back(Json{{"role", "user"}, {"content", s.observation.raw_text}});
    }
    return msgs;
}

class GatewayPolicy final : public Policy {
public:
    GatewayPolicy(std::shared_ptr<const ChatClient> client, SamplingParams params)
        : client_(std::move(client)), params_(params) {}

    std::string descriptor() const override { return "gateway:" + client_->config().model; }

    /// N independent completion requests, candidate k seeded with derive_seed(seed, {k}).
    std::vector<Action> sample(const State& state, std::size_t n, std::uint64_t seed) const override {
        std::vector<Action> out;
        out.reserve(n);
        ChatRequest req;
        req.messages = chat_messages(state);
        req.temperature = params_.temperature;
        req.max_tokens = params_.max_response_length;
        for (std::size_t k = 0; k < n; ++k) {
            req.seed = grmfilter::detail::derive_seed(seed, {k}) >> 1;
            out.push_back(parse_action(client_->complete(req, "policy")));
        }
        return out;
    }

private:
    std::shared_ptr<const ChatClient> client_;
    SamplingParams params_;
};

class GatewayJudge final : public Judge {
public:
    GatewayJudge(std::shared_ptr<const ChatClient> client, SamplingParams params)
        : client_(std::move(client)), params_(params) {}

    std::string descriptor() const override { return "gateway-grm:" + client_->config().model; }

    std::string judge(const JudgeRequest& request) const override {
        ChatRequest req;
        req.messages = Json::array({Json{{"role", "user"}, {"content", request.prompt}}});
        req.temperature = params_.temperature;
        req.max_tokens = params_.max_response_length;
        return client_->complete(req, "grm");
    }

private:
    std::shared_ptr<const ChatClient> client_;
    SamplingParams params_;
};

}  // namespace grmfilter
