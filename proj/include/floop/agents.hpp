#pragma once

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/backends.hpp"
#include "floop/controller.hpp"
#include "floop/embedding.hpp"
#include "floop/errors.hpp"
#include "floop/manifest.hpp"
#include "floop/prompt_mapper.hpp"

namespace floop {

struct AgentOutputFormat {
    std::string score_key = "SCORE";
    std::string rationale_key = "RATIONALE";

    void validate() const {
        if (score_key.empty() || rationale_key.empty())
            throw ConfigError("output format keys must be non-empty");
        if (score_key == rationale_key)
            throw ConfigError("score and rationale keys must differ");
    }
};

struct Prediction {
    double score = 0.0;  // in [0,1] after clamping
    std::string rationale;
    std::string raw_output;
    bool clamped = false;
};

struct JudgeVerdict {
    double error = 0.0;  // label − score, computed here, never parsed from model text
    std::string critique;
    FeedbackVector f = kZero3;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline bool iequals(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    for (auto& l : lines)
        if (!l.empty() && l.back() == '\r') l.pop_back();
    return lines;
}

}  // namespace detail

/// First "<score_key>: <number>" line wins (key case-insensitive, whitespace
/// tolerated); fallback is the first line that is nothing but a number
/// already in [0,1]. The value is clamped to [0,1]; *clamped reports whether
/// clamping changed it.
inline double parse_score(const std::string& raw, const AgentOutputFormat& fmt = {},
                          bool* clamped = nullptr) {
    if (clamped) *clamped = false;
    std::optional<double> found;
    const auto lines = detail::split_lines(raw);
    for (const auto& line : lines) {
        std::size_t colon = line.find(':');
        if (colon == std::string::npos) continue;
        if (!detail::iequals(detail::trim(line.substr(0, colon)), fmt.score_key)) continue;
        if (auto v = detail::parse_number(detail::trim(line.substr(colon + 1)))) {
            found = *v;
            break;
        }
    }
    if (!found) {
        for (const auto& line : lines) {
            auto v = detail::parse_number(detail::trim(line));
            if (v && *v >= 0.0 && *v <= 1.0) {
                found = *v;
                break;
            }
        }
    }
    if (!found) throw ParseError("no score line found in model output");
    double v = *found;
    if (v < 0.0 || v > 1.0) {
        if (clamped) *clamped = true;
        v = std::min(1.0, std::max(0.0, v));
    }
    return v;
}

/// Rationale line if present, otherwise the whole output collapsed to one
/// line so the field is never empty.
inline std::string parse_rationale(const std::string& raw, const AgentOutputFormat& fmt = {}) {
    for (const auto& line : detail::split_lines(raw)) {
        std::size_t colon = line.find(':');
        if (colon == std::string::npos) continue;
        if (!detail::iequals(detail::trim(line.substr(0, colon)), fmt.rationale_key)) continue;
        std::string rest = detail::trim(line.substr(colon + 1));
        if (!rest.empty()) return rest;
    }
    std::string fallback = normalize_whitespace(raw);
    return fallback.empty() ? std::string("(empty model output)") : fallback;
}

inline Prediction parse_prediction(const std::string& raw, const AgentOutputFormat& fmt = {}) {
    Prediction p;
    p.raw_output = raw;
    p.score = parse_score(raw, fmt, &p.clamped);
    p.rationale = parse_rationale(raw, fmt);
    return p;
}

/// Attaches the image when the backend can take it; otherwise the text gets
/// an explicit marker so the model knows context is missing.
inline std::vector<ChatMessage> build_reason_messages(const MemeRecord& meme,
                                                      const GuidancePrompt& prompt,
                                                      bool images_supported) {
    ChatMessage user{"user", "OCR: " + meme.ocr_text, ""};
    if (!meme.image_ref.empty()) {
        if (images_supported)
            user.image_ref = meme.image_ref;
        else
            user.content += "\n[image unavailable]";
    }
    return {ChatMessage{"system", prompt.text, ""}, std::move(user)};
}

/// Text whose embedding stands in for the model's hidden state.
inline std::string reasoning_serialization(const std::string& ocr_text,
                                           const std::string& prompt_text,
                                           const std::string& rationale) {
    return "OCR: " + ocr_text + "\nPROMPT: " + prompt_text + "\nRATIONALE: " + rationale;
}

struct ReasonResult {
    Prediction pred;
    EmbeddingVector emb;
};

inline ReasonResult reason(const MemeRecord& meme, const GuidancePrompt& prompt,
                           ModelBackend& backend, EmbeddingBackend& embedder,
                           const AgentOutputFormat& fmt = {}, int max_tokens = 128) {
    const auto messages = build_reason_messages(meme, prompt, backend.supports_images());
    ReasonResult out;
    out.pred = parse_prediction(backend.generate(messages, max_tokens), fmt);
    out.emb =
        embedder.embed(reasoning_serialization(meme.ocr_text, prompt.text, out.pred.rationale));
    if (!out.emb.is_finite()) throw EmbeddingError("embedding contains non-finite values");
    return out;
}

struct JudgeTemplates {
    std::string system_text =
        "You are a strict judge of humor-classification reasoning. You know the true label.";
    // Placeholders: {ocr} {score} {label} {rationale}
    std::string user_template =
        "OCR: {ocr}\nPREDICTED SCORE: {score}\nTRUE LABEL: {label}\nRATIONALE: {rationale}\n"
        "Critique the reasoning in one or two sentences: what did it miss or overweight?";
};

inline std::string fill_template(std::string tpl,
                                 const std::vector<std::pair<std::string, std::string>>& subs) {
    for (const auto& [key, value] : subs) {
        std::size_t pos = 0;
        while ((pos = tpl.find(key, pos)) != std::string::npos) {
            tpl.replace(pos, key.size(), value);
            pos += value.size();
        }
    }
    return tpl;
}

/// Keeps whole whitespace-delimited tokens up to max_tokens, drops the rest.
inline std::string cap_whitespace_tokens(const std::string& text, std::size_t max_tokens) {
    std::size_t tokens = 0;
    bool in_token = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool ws = std::isspace(static_cast<unsigned char>(text[i])) != 0;
        if (!ws && !in_token) {
            ++tokens;
            if (tokens > max_tokens) {
                std::string head = text.substr(0, i);
                while (!head.empty() && std::isspace(static_cast<unsigned char>(head.back())))
                    head.pop_back();
                return head;
            }
            in_token = true;
        }
        if (ws) in_token = false;
    }
    return text;
}

inline std::vector<ChatMessage> build_judge_messages(const MemeRecord& meme,
                                                     const Prediction& pred,
                                                     const JudgeTemplates& tpls,
                                                     bool images_supported) {
    if (!meme.label) throw MissingLabelError("judge requires a labeled record: " + meme.id);
    ChatMessage user{"user",
                     fill_template(tpls.user_template,
                                   {{"{ocr}", meme.ocr_text},
                                    {"{score}", nlohmann::json(pred.score).dump()},
                                    {"{label}", std::to_string(*meme.label)},
                                    {"{rationale}", pred.rationale}}),
                     ""};
    if (!meme.image_ref.empty()) {
        if (images_supported)
            user.image_ref = meme.image_ref;
        else
            user.content += "\n[image unavailable]";
    }
    return {ChatMessage{"system", tpls.system_text, ""}, std::move(user)};
}

inline JudgeVerdict judge(const MemeRecord& meme, const Prediction& pred, ModelBackend& backend,
                          EmbeddingBackend& embedder, const JudgeTemplates& tpls = {},
                          int max_tokens = 128, std::size_t critique_token_cap = 128) {
    if (!meme.label) throw MissingLabelError("judge requires a labeled record: " + meme.id);
    JudgeVerdict v;
    v.error = static_cast<double>(*meme.label) - pred.score;

    const auto messages = build_judge_messages(meme, pred, tpls, backend.supports_images());
    v.critique = backend.generate(messages, max_tokens);

    EmbeddingVector emb = embedder.embed(cap_whitespace_tokens(v.critique, critique_token_cap));
    if (emb.dim() < 3)
        throw DimensionTooSmallError("feedback projection needs embedding dim >= 3, got " +
                                     std::to_string(emb.dim()));
    if (!emb.is_finite()) throw EmbeddingError("critique embedding contains non-finite values");
    for (std::size_t i = 0; i < 3; ++i) v.f[i] = emb.values[i];  // raw, not normalized
    return v;
}

}  // namespace floop
