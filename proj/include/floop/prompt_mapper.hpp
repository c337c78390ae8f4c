#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "floop/controller.hpp"
#include "floop/errors.hpp"

namespace floop {

/// Firing order is fixed (u, f1, f2, f3, k) so equal control vectors always
/// yield byte-identical prompts.
inline constexpr std::array<const char*, 6> kDirectiveTags = {
    "u_low", "u_high", "f_irony", "f_narrative", "f_layout", "k_caution"};

struct MapperConfig {
    double activation_threshold = 0.25;
    std::map<std::string, std::string> directive_texts = {
        {"u_low", "be conservative about calling memes humorous"},
        {"u_high", "lean toward recognizing subtle humor"},
        {"f_irony", "check for irony or sarcasm"},
        {"f_narrative", "verify a setup→twist narrative structure"},
        {"f_layout", "attend to visual layout and image–text placement cues"},
        {"k_caution",
         "similar past cases were misjudged; re-examine intent vs. surface tone"}};
    std::string base_prompt_text =
        "You analyze memes for humor. Given the meme's OCR text (and image when "
        "available), decide how likely it is to be humorous.\n"
        "Answer with exactly two lines:\n"
        "SCORE: <number between 0 and 1>\n"
        "RATIONALE: <one or two sentences>";

    void validate() const {
        if (!(activation_threshold > 0.0))
            throw ConfigError("mapper.threshold must be positive");
        for (const char* tag : kDirectiveTags) {
            auto it = directive_texts.find(tag);
            if (it == directive_texts.end() || it->second.empty())
                throw ConfigError(std::string("mapper.directives missing tag: ") + tag);
        }
    }
};

struct GuidancePrompt {
    std::string text;
    std::vector<std::string> directives;  // tags fired, in firing order
};

/// Deterministic control-to-text mapping. The zero vector yields exactly the
/// base prompt with no directives.
inline GuidancePrompt map_control_to_prompt(const ControlVector& c, const MapperConfig& cfg) {
    if (!c.is_finite()) throw InvalidControlError("map_control_to_prompt: non-finite control");
    const double t = cfg.activation_threshold;

    GuidancePrompt out;
    out.text = cfg.base_prompt_text;

    auto fire = [&](const char* tag) { out.directives.emplace_back(tag); };
    if (c.u < -t) fire("u_low");
    if (c.u > t) fire("u_high");
    if (std::fabs(c.f[0]) > t) fire("f_irony");
    if (std::fabs(c.f[1]) > t) fire("f_narrative");
    if (std::fabs(c.f[2]) > t) fire("f_layout");
    if (std::max({std::fabs(c.k[0]), std::fabs(c.k[1]), std::fabs(c.k[2])}) > t)
        fire("k_caution");

    if (!out.directives.empty()) {
        out.text += "\nGuidance:";
        for (const auto& tag : out.directives)
            out.text += "\n- " + cfg.directive_texts.at(tag);
    }
    return out;
}

inline const std::vector<std::string>& directive_report(const GuidancePrompt& prompt) {
    return prompt.directives;
}

}  // namespace floop
