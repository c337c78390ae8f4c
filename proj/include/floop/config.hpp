#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/agents.hpp"
#include "floop/backends.hpp"
#include "floop/controller.hpp"
#include "floop/errors.hpp"
#include "floop/knowledge_base.hpp"
#include "floop/manifest.hpp"
#include "floop/prompt_mapper.hpp"

namespace floop {

struct RetrievalConfig {
    std::size_t top_k = 3;
    std::string g_mode = "truncate";  // truncate | random_projection
    std::uint64_t g_seed = 17;

    GProjectionConfig projection() const {
        GProjectionConfig g;
        g.mode = g_mode == "random_projection" ? GProjectionConfig::Mode::kRandomProjection
                                               : GProjectionConfig::Mode::kTruncate;
        g.seed = g_seed;
        return g;
    }
};

struct RunSection {
    int refine_iters = 1;
    bool train_retrieval = false;
    std::uint64_t seed = 42;
    double threshold = 0.5;  // binarization
    std::string on_error = "skip";  // skip | fail
    bool shuffle_train = false;
};

struct AblationConfig {
    bool disable_retrieval = false;  // force k = (0,0,0) in both phases
    bool zero_controller = false;    // force u = 0 and leave PID state untouched
    bool zero_feedback = false;      // zero the f slots carried into training prompts
};

struct MockChatConfig {
    std::vector<std::pair<std::string, double>> keywords{{"ironic", 0.8}};
    double default_score = 0.5;
    double delta = 0.2;
};

struct BackendConfig {
    std::string kind = "mock";  // mock | http | scripted
    std::string base_url = "http://localhost:8000/v1";
    std::string model = "local-model";
    int max_tokens = 128;
    double timeout_s = 30.0;
    int retries = 3;
    double backoff_s = 0.25;
    double temperature = 0.0;
    std::string env_token_name = "FLOOP_API_TOKEN";
    int in_flight = 4;
    std::optional<bool> supports_images;  // default: false for mock/scripted, true for http
    std::string script_path;              // scripted kind only
    MockChatConfig mock;
};

struct EmbeddingConfig {
    std::string kind = "mock";  // mock | http
    std::string base_url = "http://localhost:8000/v1";
    std::string model = "local-embedder";
    std::size_t dim = 32;
    std::uint64_t seed = 7;
};

struct AgentConfig {
    AgentOutputFormat format;
    JudgeTemplates judge;
};

struct PathsConfig {
    std::string manifest;
    std::string kb = "kb.jsonl";
    std::string trace = "trace.jsonl";
    std::string report = "report.json";
};

struct RunConfig {
    PidGains gains;
    double integral_bound = 10.0;
    PolicyConfig policy;
    MapperConfig mapper;
    RetrievalConfig retrieval;
    RunSection run;
    AblationConfig ablation;
    BackendConfig backend;
    EmbeddingConfig embedding;
    AgentConfig agent;
    PathsConfig paths;
    SplitFractions split;

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);

    PidState initial_pid_state() const {
        PidState s;
        s.integral_bound = integral_bound;
        return s;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) known = true;
        if (!known)
            throw ConfigError(std::string("unknown config key ") + section + "." + it.key());
    }
}

inline const nlohmann::json* section(const nlohmann::json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) return nullptr;
    if (!it->is_object()) throw ConfigError(std::string("config section ") + name +
                                            " must be an object");
    return &*it;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* section_name, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key ") + section_name + "." + key +
                          " has the wrong type");
    }
}

// Accepts a number or "inf"-like strings for unbounded integrators.
inline void read_bound(const nlohmann::json& j, const char* key, double& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (it->is_string()) {
        const std::string s = it->get<std::string>();
        if (s == "inf" || s == "+inf" || s == "infinity")
            out = std::numeric_limits<double>::infinity();
        else
            throw ConfigError("controller.integral_bound string must be \"inf\"");
        return;
    }
    if (!it->is_number()) throw ConfigError("controller.integral_bound must be a number");
    out = it->get<double>();
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    if (!j.is_object()) throw ConfigError("config root must be an object");
    detail::check_keys(j,
                       {"gains", "controller", "policy", "mapper", "retrieval", "run", "ablation",
                        "backend", "embedding", "agent", "paths", "split"},
                       "<root>");

    if (const auto* s = detail::section(j, "gains")) {
        detail::check_keys(*s, {"kp", "ki", "kd"}, "gains");
        detail::read_field(*s, "gains", "kp", c.gains.kp);
        detail::read_field(*s, "gains", "ki", c.gains.ki);
        detail::read_field(*s, "gains", "kd", c.gains.kd);
    }
    if (const auto* s = detail::section(j, "controller")) {
        detail::check_keys(*s, {"integral_bound"}, "controller");
        detail::read_bound(*s, "integral_bound", c.integral_bound);
    }
    if (const auto* s = detail::section(j, "policy")) {
        detail::check_keys(*s, {"weights", "u_max"}, "policy");
        if (auto it = s->find("weights"); it != s->end()) {
            if (!it->is_array() || it->size() != 3)
                throw ConfigError("policy.weights must be an array of 3 numbers");
            for (std::size_t i = 0; i < 3; ++i) {
                if (!(*it)[i].is_number())
                    throw ConfigError("policy.weights must be an array of 3 numbers");
                c.policy.weights[i] = (*it)[i].get<double>();
            }
        }
        detail::read_field(*s, "policy", "u_max", c.policy.u_max);
    }
    if (const auto* s = detail::section(j, "mapper")) {
        detail::check_keys(*s, {"threshold", "base_prompt", "directives"}, "mapper");
        detail::read_field(*s, "mapper", "threshold", c.mapper.activation_threshold);
        detail::read_field(*s, "mapper", "base_prompt", c.mapper.base_prompt_text);
        if (auto it = s->find("directives"); it != s->end()) {
            if (!it->is_object()) throw ConfigError("mapper.directives must be an object");
            for (auto d = it->begin(); d != it->end(); ++d) {
                bool known = false;
                for (const char* tag : kDirectiveTags)
                    if (d.key() == tag) known = true;
                if (!known)
                    throw ConfigError("unknown config key mapper.directives." + d.key());
                if (!d.value().is_string())
                    throw ConfigError("mapper.directives." + d.key() + " must be a string");
                c.mapper.directive_texts[d.key()] = d.value().get<std::string>();
            }
        }
    }
    if (const auto* s = detail::section(j, "retrieval")) {
        detail::check_keys(*s, {"top_k", "g_mode", "g_seed"}, "retrieval");
        detail::read_field(*s, "retrieval", "top_k", c.retrieval.top_k);
        detail::read_field(*s, "retrieval", "g_mode", c.retrieval.g_mode);
        detail::read_field(*s, "retrieval", "g_seed", c.retrieval.g_seed);
    }
    if (const auto* s = detail::section(j, "run")) {
        detail::check_keys(
            *s, {"refine_iters", "train_retrieval", "seed", "threshold", "on_error",
                 "shuffle_train"},
            "run");
        detail::read_field(*s, "run", "refine_iters", c.run.refine_iters);
        detail::read_field(*s, "run", "train_retrieval", c.run.train_retrieval);
        detail::read_field(*s, "run", "seed", c.run.seed);
        detail::read_field(*s, "run", "threshold", c.run.threshold);
        detail::read_field(*s, "run", "on_error", c.run.on_error);
        detail::read_field(*s, "run", "shuffle_train", c.run.shuffle_train);
    }
    if (const auto* s = detail::section(j, "ablation")) {
        detail::check_keys(*s, {"disable_retrieval", "zero_controller", "zero_feedback"},
                           "ablation");
        detail::read_field(*s, "ablation", "disable_retrieval", c.ablation.disable_retrieval);
        detail::read_field(*s, "ablation", "zero_controller", c.ablation.zero_controller);
        detail::read_field(*s, "ablation", "zero_feedback", c.ablation.zero_feedback);
    }
    if (const auto* s = detail::section(j, "backend")) {
        detail::check_keys(*s,
                           {"kind", "base_url", "model", "max_tokens", "timeout_s", "retries",
                            "backoff_s", "temperature", "env_token_name", "in_flight",
                            "supports_images", "script_path", "mock"},
                           "backend");
        detail::read_field(*s, "backend", "kind", c.backend.kind);
        detail::read_field(*s, "backend", "base_url", c.backend.base_url);
        detail::read_field(*s, "backend", "model", c.backend.model);
        detail::read_field(*s, "backend", "max_tokens", c.backend.max_tokens);
        detail::read_field(*s, "backend", "timeout_s", c.backend.timeout_s);
        detail::read_field(*s, "backend", "retries", c.backend.retries);
        detail::read_field(*s, "backend", "backoff_s", c.backend.backoff_s);
        detail::read_field(*s, "backend", "temperature", c.backend.temperature);
        detail::read_field(*s, "backend", "env_token_name", c.backend.env_token_name);
        detail::read_field(*s, "backend", "in_flight", c.backend.in_flight);
        if (auto it = s->find("supports_images"); it != s->end()) {
            if (!it->is_boolean()) throw ConfigError("backend.supports_images must be a boolean");
            c.backend.supports_images = it->get<bool>();
        }
        detail::read_field(*s, "backend", "script_path", c.backend.script_path);
        if (const auto* m = detail::section(*s, "mock")) {
            detail::check_keys(*m, {"keywords", "default_score", "delta"}, "backend.mock");
            if (auto it = m->find("keywords"); it != m->end()) {
                if (!it->is_array())
                    throw ConfigError("backend.mock.keywords must be an array of [text, score]");
                c.backend.mock.keywords.clear();
                for (const auto& kv : *it) {
                    if (!kv.is_array() || kv.size() != 2 || !kv[0].is_string() ||
                        !kv[1].is_number())
                        throw ConfigError(
                            "backend.mock.keywords must be an array of [text, score]");
                    c.backend.mock.keywords.emplace_back(kv[0].get<std::string>(),
                                                         kv[1].get<double>());
                }
            }
            detail::read_field(*m, "backend.mock", "default_score", c.backend.mock.default_score);
            detail::read_field(*m, "backend.mock", "delta", c.backend.mock.delta);
        }
    }
    if (const auto* s = detail::section(j, "embedding")) {
        detail::check_keys(*s, {"kind", "base_url", "model", "dim", "seed"}, "embedding");
        detail::read_field(*s, "embedding", "kind", c.embedding.kind);
        detail::read_field(*s, "embedding", "base_url", c.embedding.base_url);
        detail::read_field(*s, "embedding", "model", c.embedding.model);
        detail::read_field(*s, "embedding", "dim", c.embedding.dim);
        detail::read_field(*s, "embedding", "seed", c.embedding.seed);
    }
    if (const auto* s = detail::section(j, "agent")) {
        detail::check_keys(*s, {"score_key", "rationale_key", "judge_system", "judge_prompt"},
                           "agent");
        detail::read_field(*s, "agent", "score_key", c.agent.format.score_key);
        detail::read_field(*s, "agent", "rationale_key", c.agent.format.rationale_key);
        detail::read_field(*s, "agent", "judge_system", c.agent.judge.system_text);
        detail::read_field(*s, "agent", "judge_prompt", c.agent.judge.user_template);
    }
    if (const auto* s = detail::section(j, "paths")) {
        detail::check_keys(*s, {"manifest", "kb", "trace", "report"}, "paths");
        detail::read_field(*s, "paths", "manifest", c.paths.manifest);
        detail::read_field(*s, "paths", "kb", c.paths.kb);
        detail::read_field(*s, "paths", "trace", c.paths.trace);
        detail::read_field(*s, "paths", "report", c.paths.report);
    }
    if (const auto* s = detail::section(j, "split")) {
        detail::check_keys(*s, {"train", "val", "test"}, "split");
        detail::read_field(*s, "split", "train", c.split.train);
        detail::read_field(*s, "split", "val", c.split.val);
        detail::read_field(*s, "split", "test", c.split.test);
    }
    c.validate();
    return c;
}

inline RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid config JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

inline void RunConfig::validate() const {
    for (double g : {gains.kp, gains.ki, gains.kd})
        if (!std::isfinite(g)) throw ConfigError("gains must be finite");
    if (std::isnan(integral_bound) || integral_bound <= 0.0)
        throw ConfigError("controller.integral_bound must be positive (or \"inf\")");
    if (!(policy.u_max > 0.0) || !std::isfinite(policy.u_max))
        throw ConfigError("policy.u_max must be positive and finite");
    for (double w : policy.weights)
        if (!std::isfinite(w)) throw ConfigError("policy.weights must be finite");
    mapper.validate();
    if (retrieval.top_k < 1) throw ConfigError("retrieval.top_k must be >= 1");
    if (retrieval.g_mode != "truncate" && retrieval.g_mode != "random_projection")
        throw ConfigError("retrieval.g_mode must be truncate or random_projection");
    if (run.refine_iters < 1) throw ConfigError("run.refine_iters must be >= 1");
    if (!(run.threshold > 0.0 && run.threshold < 1.0))
        throw ConfigError("run.threshold must lie strictly between 0 and 1");
    if (run.on_error != "skip" && run.on_error != "fail")
        throw ConfigError("run.on_error must be skip or fail");
    if (backend.kind != "mock" && backend.kind != "http" && backend.kind != "scripted")
        throw ConfigError("backend.kind must be mock, http, or scripted");
    if (backend.kind == "scripted" && backend.script_path.empty())
        throw ConfigError("backend.script_path required for scripted backend");
    if (backend.max_tokens < 1) throw ConfigError("backend.max_tokens must be >= 1");
    if (!(backend.timeout_s > 0.0)) throw ConfigError("backend.timeout_s must be positive");
    if (backend.retries < 0) throw ConfigError("backend.retries must be >= 0");
    if (backend.backoff_s < 0.0) throw ConfigError("backend.backoff_s must be >= 0");
    if (backend.in_flight < 1) throw ConfigError("backend.in_flight must be >= 1");
    if (!(backend.mock.default_score >= 0.0 && backend.mock.default_score <= 1.0))
        throw ConfigError("backend.mock.default_score must lie in [0,1]");
    if (!(backend.mock.delta >= 0.0 && backend.mock.delta <= 1.0))
        throw ConfigError("backend.mock.delta must lie in [0,1]");
    for (const auto& [kw, score] : backend.mock.keywords) {
        if (kw.empty()) throw ConfigError("backend.mock.keywords entries must be non-empty");
        if (!(score >= 0.0 && score <= 1.0))
            throw ConfigError("backend.mock keyword scores must lie in [0,1]");
    }
    if (embedding.kind != "mock" && embedding.kind != "http")
        throw ConfigError("embedding.kind must be mock or http");
    if (embedding.dim < 3)
        throw ConfigError("embedding.dim must be >= 3 (feedback and memory need 3 components)");
    agent.format.validate();
    if (agent.judge.user_template.empty()) throw ConfigError("agent.judge_prompt must be non-empty");
    if (paths.kb.empty() || paths.trace.empty())
        throw ConfigError("paths.kb and paths.trace must be non-empty");
    double sum = split.train + split.val + split.test;
    for (double f : {split.train, split.val, split.test})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json directives = nlohmann::json::object();
    for (const char* tag : kDirectiveTags) directives[tag] = mapper.directive_texts.at(tag);
    nlohmann::json j{
        {"gains", {{"kp", gains.kp}, {"ki", gains.ki}, {"kd", gains.kd}}},
        {"controller",
         {{"integral_bound", std::isinf(integral_bound) ? nlohmann::json("inf")
                                                        : nlohmann::json(integral_bound)}}},
        {"policy",
         {{"weights", {policy.weights[0], policy.weights[1], policy.weights[2]}},
          {"u_max", policy.u_max}}},
        {"mapper",
         {{"threshold", mapper.activation_threshold},
          {"base_prompt", mapper.base_prompt_text},
          {"directives", directives}}},
        {"retrieval",
         {{"top_k", retrieval.top_k}, {"g_mode", retrieval.g_mode}, {"g_seed", retrieval.g_seed}}},
        {"run",
         {{"refine_iters", run.refine_iters},
          {"train_retrieval", run.train_retrieval},
          {"seed", run.seed},
          {"threshold", run.threshold},
          {"on_error", run.on_error},
          {"shuffle_train", run.shuffle_train}}},
        {"ablation",
         {{"disable_retrieval", ablation.disable_retrieval},
          {"zero_controller", ablation.zero_controller},
          {"zero_feedback", ablation.zero_feedback}}},
        {"backend",
         {{"kind", backend.kind},
          {"base_url", backend.base_url},
          {"model", backend.model},
          {"max_tokens", backend.max_tokens},
          {"timeout_s", backend.timeout_s},
          {"retries", backend.retries},
          {"backoff_s", backend.backoff_s},
          {"temperature", backend.temperature},
          {"env_token_name", backend.env_token_name},
          {"in_flight", backend.in_flight},
          {"script_path", backend.script_path},
          {"mock",
           {{"keywords", backend.mock.keywords},
            {"default_score", backend.mock.default_score},
            {"delta", backend.mock.delta}}}}},
        {"embedding",
         {{"kind", embedding.kind},
          {"base_url", embedding.base_url},
          {"model", embedding.model},
          {"dim", embedding.dim},
          {"seed", embedding.seed}}},
        {"agent",
         {{"score_key", agent.format.score_key},
          {"rationale_key", agent.format.rationale_key},
          {"judge_system", agent.judge.system_text},
          {"judge_prompt", agent.judge.user_template}}},
        {"paths",
         {{"manifest", paths.manifest},
          {"kb", paths.kb},
          {"trace", paths.trace},
          {"report", paths.report}}},
        {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};
    if (backend.supports_images) j["backend"]["supports_images"] = *backend.supports_images;
    return j;
}

// ---------------------------------------------------------------------------
// Backend factories
// ---------------------------------------------------------------------------

inline std::vector<ScriptedBackend::Entry> load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open script: " + path);
    std::vector<ScriptedBackend::Entry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("invalid script JSON: ") + e.what(), lineno);
        }
        if (!j.contains("fingerprint") || !j.contains("response"))
            throw SchemaError("script entries need fingerprint and response", lineno);
        entries.push_back(
            {j.at("fingerprint").get<std::string>(), j.at("response").get<std::string>()});
    }
    return entries;
}

inline void save_script(const std::string& path,
                        const std::vector<ScriptedBackend::Entry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write script: " + path);
    for (const auto& e : entries)
        out << nlohmann::json{{"fingerprint", e.fingerprint}, {"response", e.response}}.dump()
            << "\n";
}

inline std::unique_ptr<ModelBackend> make_chat_backend(const RunConfig& cfg) {
    const auto& b = cfg.backend;
    if (b.kind == "mock") {
        MockPolicy policy;
        policy.keywords = b.mock.keywords;
        policy.default_score = b.mock.default_score;
        policy.delta = b.mock.delta;
        policy.u_low_marker = cfg.mapper.directive_texts.at("u_low");
        return std::make_unique<MockChatBackend>(std::move(policy));
    }
    if (b.kind == "scripted")
        return std::make_unique<ScriptedBackend>(load_script(b.script_path));
    HttpEndpointConfig http;
    http.base_url = b.base_url;
    http.model = b.model;
    http.timeout_s = b.timeout_s;
    http.retries = b.retries;
    http.backoff_s = b.backoff_s;
    http.temperature = b.temperature;
    http.env_token_name = b.env_token_name;
    http.supports_images = b.supports_images.value_or(true);
    return std::make_unique<HttpChatBackend>(std::move(http));
}

inline std::unique_ptr<EmbeddingBackend> make_embedding_backend(const RunConfig& cfg) {
    const auto& e = cfg.embedding;
    if (e.kind == "mock") return std::make_unique<MockEmbeddingBackend>(e.dim, e.seed);
    HttpEndpointConfig http;
    http.base_url = e.base_url;
    http.model = e.model;
    http.timeout_s = cfg.backend.timeout_s;
    http.retries = cfg.backend.retries;
    http.backoff_s = cfg.backend.backoff_s;
    http.env_token_name = cfg.backend.env_token_name;
    return std::make_unique<HttpEmbeddingBackend>(std::move(http), e.dim);
}

}  // namespace floop
