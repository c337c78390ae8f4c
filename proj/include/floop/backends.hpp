#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "floop/digest.hpp"
#include "floop/embedding.hpp"
#include "floop/errors.hpp"

namespace floop {

struct ChatMessage {
    std::string role;
    std::string content;
    std::string image_ref;  // empty when the message carries no image
};

/// Frozen generative model behind a chat interface.
class ModelBackend {
  public:
    virtual ~ModelBackend() = default;
    virtual std::string generate(const std::vector<ChatMessage>& messages, int max_tokens) = 0;
    virtual bool supports_images() const { return false; }
};

class EmbeddingBackend {
  public:
    virtual ~EmbeddingBackend() = default;
    virtual EmbeddingVector embed(const std::string& text) = 0;
    virtual std::size_t dim() const = 0;
};

/// Stable fingerprint of a message list: whitespace-normalized content,
/// sorted JSON keys. Survives refactors that only reflow text.
inline std::string fingerprint_messages(const std::vector<ChatMessage>& messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) {
        nlohmann::json j{{"role", m.role}, {"content", normalize_whitespace(m.content)}};
        if (!m.image_ref.empty()) j["image_ref"] = m.image_ref;
        arr.push_back(std::move(j));
    }
    return fnv1a64_hex(arr.dump());
}

// ---------------------------------------------------------------------------
// Deterministic offline mocks
// ---------------------------------------------------------------------------

/// Seeded text hash expanded to a unit vector. Identical text gives identical
/// vectors across runs and platforms (integer mixing only).
class MockEmbeddingBackend : public EmbeddingBackend {
  public:
    explicit MockEmbeddingBackend(std::size_t dim = 32, std::uint64_t seed = 7)
        : dim_(dim), seed_(seed) {}

    EmbeddingVector embed(const std::string& text) override {
        std::uint64_t state = fnv1a64(text) ^ (0x9E3779B97F4A7C15ull * (seed_ + 1));
        EmbeddingVector v;
        v.values.resize(dim_);
        for (std::size_t i = 0; i < dim_; ++i) v.values[i] = unit_interval(splitmix64(state));
        double n = v.norm();
        if (n < 1e-12) {
            v.values[0] = 1.0;
            n = v.norm();
        }
        for (double& x : v.values) x /= n;
        return v;
    }

    std::size_t dim() const override { return dim_; }

  private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Offline reasoning agent with a ground-truth causal pathway from prompt
/// directives to scores: a keyword table over the OCR text sets the base
/// score, and the conservative directive lowers it by delta.
struct MockPolicy {
    std::vector<std::pair<std::string, double>> keywords{{"ironic", 0.8}};
    double default_score = 0.5;
    double delta = 0.2;
    std::string u_low_marker = "be conservative about calling memes humorous";
};

class MockChatBackend : public ModelBackend {
  public:
    explicit MockChatBackend(MockPolicy policy = {}) : policy_(std::move(policy)) {}

    std::string generate(const std::vector<ChatMessage>& messages, int /*max_tokens*/) override {
        const std::string ocr = extract_ocr(messages);
        std::vector<std::string> matched;
        double score = policy_.default_score;
        bool first = true;
        for (const auto& [kw, s] : policy_.keywords) {
            if (contains_ci(ocr, kw)) {
                if (first) score = s;  // first table entry wins
                first = false;
                matched.push_back(kw);
            }
        }
        bool conservative = false;
        for (const auto& m : messages) {
            if (!policy_.u_low_marker.empty() &&
                m.content.find(policy_.u_low_marker) != std::string::npos) {
                conservative = true;
                break;
            }
        }
        if (conservative) score -= policy_.delta;
        score = std::min(1.0, std::max(0.0, score));

        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", score);
        std::string out = std::string("SCORE: ") + buf + "\nRATIONALE: ";
        if (matched.empty()) {
            out += "no salient humor cues detected.";
        } else {
            out += "detected cues: ";
            for (std::size_t i = 0; i < matched.size(); ++i) {
                if (i) out += ", ";
                out += matched[i];
            }
            out += ".";
        }
        if (conservative) out += " Conservative guidance applied.";
        return out;
    }

    const MockPolicy& policy() const { return policy_; }

  private:
    // The reasoning-agent user message is "OCR: <text>"; anything else
    // (e.g. a judge request) is matched as-is.
    static std::string extract_ocr(const std::vector<ChatMessage>& messages) {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
            if (it->role != "user") continue;
            std::string text = it->content;
            const std::string marker = "\n[image unavailable]";
            if (text.size() >= marker.size() &&
                text.compare(text.size() - marker.size(), marker.size(), marker) == 0)
                text.resize(text.size() - marker.size());
            if (text.rfind("OCR: ", 0) == 0) text.erase(0, 5);
            return text;
        }
        return {};
    }

    static bool contains_ci(const std::string& haystack, const std::string& needle) {
        if (needle.empty()) return false;
        auto lower = [](std::string s) {
            for (char& c : s)
                if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            return s;
        };
        return lower(haystack).find(lower(needle)) != std::string::npos;
    }

    MockPolicy policy_;
};

// ---------------------------------------------------------------------------
// Scripted replay
// ---------------------------------------------------------------------------

/// Replays canned responses keyed by request fingerprint; each entry is
/// consumed once. In strict mode an unknown fingerprint is an error,
/// otherwise it yields an empty response.
class ScriptedBackend : public ModelBackend {
  public:
    struct Entry {
        std::string fingerprint;
        std::string response;
    };

    explicit ScriptedBackend(std::vector<Entry> script, bool strict = true)
        : script_(script.begin(), script.end()), strict_(strict) {}

    std::string generate(const std::vector<ChatMessage>& messages, int /*max_tokens*/) override {
        const std::string fp = fingerprint_messages(messages);
        std::lock_guard<std::mutex> lock(mu_);
        for (auto it = script_.begin(); it != script_.end(); ++it) {
            if (it->fingerprint == fp) {
                std::string out = it->response;
                script_.erase(it);
                return out;
            }
        }
        if (strict_) throw BackendError("scripted backend: no response for fingerprint " + fp);
        return {};
    }

    std::size_t remaining() const {
        std::lock_guard<std::mutex> lock(mu_);
        return script_.size();
    }

  private:
    mutable std::mutex mu_;
    std::deque<Entry> script_;
    bool strict_;
};

/// Decorator that records (fingerprint, response) pairs for later replay.
class RecordingBackend : public ModelBackend {
  public:
    explicit RecordingBackend(ModelBackend& inner) : inner_(inner) {}

    std::string generate(const std::vector<ChatMessage>& messages, int max_tokens) override {
        std::string out = inner_.generate(messages, max_tokens);
        std::lock_guard<std::mutex> lock(mu_);
        script_.push_back({fingerprint_messages(messages), out});
        return out;
    }

    bool supports_images() const override { return inner_.supports_images(); }

    std::vector<ScriptedBackend::Entry> script() const {
        std::lock_guard<std::mutex> lock(mu_);
        return script_;
    }

  private:
    ModelBackend& inner_;
    mutable std::mutex mu_;
    std::vector<ScriptedBackend::Entry> script_;
};

// ---------------------------------------------------------------------------
// HTTP clients (chat-completions wire shape)
// ---------------------------------------------------------------------------

struct HttpEndpointConfig {
    std::string base_url = "http://localhost:8000/v1";
    std::string model;
    double timeout_s = 30.0;
    int retries = 3;
    double backoff_s = 0.25;
    double temperature = 0.0;
    std::string env_token_name;  // bearer token read from this env var when set
    bool supports_images = true;
};

namespace detail {

struct SplitUrl {
    std::string host;  // scheme://authority
    std::string path;  // path prefix, no trailing slash
};

inline SplitUrl split_base_url(const std::string& base_url) {
    auto scheme_end = base_url.find("://");
    std::size_t path_start = base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    SplitUrl s;
    if (path_start == std::string::npos) {
        s.host = base_url;
    } else {
        s.host = base_url.substr(0, path_start);
        s.path = base_url.substr(path_start);
    }
    while (!s.path.empty() && s.path.back() == '/') s.path.pop_back();
    return s;
}

inline bool transient_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

/// POSTs JSON with bounded retries on transport errors and transient statuses.
/// Once a body has been received with a success status, the response is final:
/// parse failures are not retried.
inline nlohmann::json post_json(const HttpEndpointConfig& cfg, const std::string& path,
                                const nlohmann::json& body) {
    const SplitUrl url = split_base_url(cfg.base_url);
    httplib::Client client(url.host);
    const auto timeout =
        std::chrono::microseconds(static_cast<std::int64_t>(cfg.timeout_s * 1e6));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!cfg.env_token_name.empty()) {
        if (const char* tok = std::getenv(cfg.env_token_name.c_str()); tok && *tok)
            headers.emplace("Authorization", std::string("Bearer ") + tok);
    }

    const std::string payload = body.dump();
    int attempts = 0;
    for (;;) {
        ++attempts;
        auto res = client.Post(url.path + path, headers, payload, "application/json");
        if (res && res->status >= 200 && res->status < 300) {
            if (attempts > 1)
                std::cerr << "floop: request succeeded after " << (attempts - 1) << " retr"
                          << (attempts == 2 ? "y" : "ies") << "\n";
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw BackendError(std::string("backend returned unparseable body: ") + e.what(),
                                   res->status);
            }
        }

        const bool retryable =
            !res ? res.error() != httplib::Error::Canceled : transient_status(res->status);
        if (!retryable || attempts > cfg.retries) {
            if (!res) {
                if (res.error() == httplib::Error::ConnectionTimeout ||
                    res.error() == httplib::Error::Read || res.error() == httplib::Error::Write)
                    throw TimeoutError("backend request timed out: " + cfg.base_url + path);
                throw BackendError("backend transport error: " + httplib::to_string(res.error()));
            }
            std::string excerpt = res->body.substr(0, 200);
            throw BackendError("backend returned status " + std::to_string(res->status) + ": " +
                               excerpt,
                               res->status);
        }
        const double delay = cfg.backoff_s * static_cast<double>(1 << (attempts - 1));
        std::cerr << "floop: retrying (" << attempts << "/" << cfg.retries << ") after "
                  << (res ? ("status " + std::to_string(res->status)) : "transport error")
                  << "\n";
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
}

}  // namespace detail

/// POST {base_url}/chat/completions with {model, messages, max_tokens, temperature}.
class HttpChatBackend : public ModelBackend {
  public:
    explicit HttpChatBackend(HttpEndpointConfig cfg) : cfg_(std::move(cfg)) {}

    std::string generate(const std::vector<ChatMessage>& messages, int max_tokens) override {
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : messages) {
            if (!m.image_ref.empty()) {
                msgs.push_back(
                    {{"role", m.role},
                     {"content",
                      nlohmann::json::array(
                          {{{"type", "text"}, {"text", m.content}},
                           {{"type", "image_url"},
                            {"image_url", {{"url", m.image_ref}}}}})}});
            } else {
                msgs.push_back({{"role", m.role}, {"content", m.content}});
            }
        }
        nlohmann::json body{{"model", cfg_.model},
                            {"messages", std::move(msgs)},
                            {"max_tokens", max_tokens},
                            {"temperature", cfg_.temperature}};
        nlohmann::json res = detail::post_json(cfg_, "/chat/completions", body);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw BackendError("backend response missing choices[0].message.content");
        }
    }

    bool supports_images() const override { return cfg_.supports_images; }

  private:
    HttpEndpointConfig cfg_;
};

/// POST {base_url}/embeddings with {model, input}.
class HttpEmbeddingBackend : public EmbeddingBackend {
  public:
    HttpEmbeddingBackend(HttpEndpointConfig cfg, std::size_t dim)
        : cfg_(std::move(cfg)), dim_(dim) {}

    EmbeddingVector embed(const std::string& text) override {
        nlohmann::json body{{"model", cfg_.model}, {"input", text}};
        nlohmann::json res;
        try {
            res = detail::post_json(cfg_, "/embeddings", body);
        } catch (const BackendError& e) {
            throw EmbeddingError(e.what());
        }
        EmbeddingVector v;
        try {
            v.values = res.at("data").at(0).at("embedding").get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            throw EmbeddingError("embedding response missing data[0].embedding");
        }
        if (dim_ != 0 && v.dim() != dim_)
            throw EmbeddingError("embedding dim " + std::to_string(v.dim()) +
                                 " != configured dim " + std::to_string(dim_));
        return v;
    }

    std::size_t dim() const override { return dim_; }

  private:
    HttpEndpointConfig cfg_;
    std::size_t dim_;
};

}  // namespace floop
