#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/digest.hpp"
#include "floop/errors.hpp"

namespace floop {

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(const std::string& s) {
    if (s == "train") return Split::kTrain;
    if (s == "val") return Split::kVal;
    if (s == "test") return Split::kTest;
    return std::nullopt;
}

struct MemeRecord {
    std::string id;
    std::string image_ref;
    std::string ocr_text;
    std::optional<int> label;    // 0 or 1
    std::optional<Split> split;  // predefined split tag, if any
    std::size_t source_line = 0;
};

struct Manifest {
    std::vector<MemeRecord> records;  // file order
    std::string source_path;
    std::string checksum;  // digest of the raw file bytes
};

namespace detail {

// One CSV line, RFC-style quoting: quoted fields may contain commas and
// doubled quotes. No embedded newlines.
inline std::vector<std::string> parse_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            if (!cur.empty()) throw SchemaError("unexpected quote inside CSV field", lineno);
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
        ++i;
    }
    if (quoted) throw SchemaError("unterminated quoted CSV field", lineno);
    fields.push_back(std::move(cur));
    return fields;
}

inline std::optional<int> parse_label_text(const std::string& s, std::size_t lineno) {
    if (s.empty()) return std::nullopt;
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw SchemaError("label must be 0 or 1, got \"" + s + "\"", lineno);
}

inline MemeRecord record_from_json(const nlohmann::json& j, std::size_t lineno) {
    if (!j.is_object()) throw SchemaError("manifest line is not an object", lineno);
    MemeRecord rec;
    rec.source_line = lineno;
    for (const char* key : {"id", "image", "ocr_text"}) {
        if (!j.contains(key))
            throw SchemaError(std::string("missing required field \"") + key + "\"", lineno);
        if (!j.at(key).is_string())
            throw SchemaError(std::string("field \"") + key + "\" must be a string", lineno);
    }
    rec.id = j.at("id").get<std::string>();
    rec.image_ref = j.at("image").get<std::string>();
    rec.ocr_text = j.at("ocr_text").get<std::string>();
    if (rec.id.empty()) throw SchemaError("id must be non-empty", lineno);
    if (j.contains("label") && !j.at("label").is_null()) {
        const auto& l = j.at("label");
        if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1))
            throw SchemaError("label must be 0 or 1", lineno);
        rec.label = l.get<int>();
    }
    if (j.contains("split") && !j.at("split").is_null()) {
        const auto& s = j.at("split");
        if (!s.is_string()) throw SchemaError("split must be a string", lineno);
        auto sp = parse_split(s.get<std::string>());
        if (!sp)
            throw SchemaError("split must be train, val, or test, got \"" +
                                  s.get<std::string>() + "\"",
                              lineno);
        rec.split = *sp;
    }
    return rec;
}

}  // namespace detail

/// Loads JSONL (one object per line) or, when the first line looks like a
/// CSV header containing the id column, CSV with columns
/// id,image,ocr_text[,label[,split]] in any order. Blank lines are skipped.
inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open manifest: " + path);
    std::ostringstream raw;
    raw << in.rdbuf();
    const std::string bytes = raw.str();

    Manifest mf;
    mf.source_path = path;
    mf.checksum = fnv1a64_hex(bytes);

    std::istringstream stream(bytes);
    std::string line;
    std::size_t lineno = 0;

    // Sniff the format from the first non-blank line.
    std::vector<std::pair<std::size_t, std::string>> lines;
    while (std::getline(stream, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        bool blank = line.find_first_not_of(" \t") == std::string::npos;
        if (!blank) lines.emplace_back(lineno, line);
    }
    if (lines.empty()) return mf;

    std::unordered_set<std::string> seen;
    auto add = [&](MemeRecord rec) {
        if (!seen.insert(rec.id).second)
            throw DuplicateIdError("duplicate id \"" + rec.id + "\" (line " +
                                   std::to_string(rec.source_line) + ")");
        if (rec.split == Split::kTrain && !rec.label)
            throw SchemaError("train record \"" + rec.id + "\" has no label", rec.source_line);
        mf.records.push_back(std::move(rec));
    };

    const std::string& first = lines.front().second;
    const bool is_csv = first[0] != '{';
    if (is_csv) {
        auto header = detail::parse_csv_line(first, lines.front().first);
        std::unordered_map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
        for (const char* key : {"id", "image", "ocr_text"}) {
            if (!col.count(key))
                throw SchemaError(std::string("CSV header missing column \"") + key + "\"",
                                  lines.front().first);
        }
        for (std::size_t li = 1; li < lines.size(); ++li) {
            const auto& [ln, text] = lines[li];
            auto fields = detail::parse_csv_line(text, ln);
            auto cell = [&](const char* key) -> std::string {
                auto it = col.find(key);
                if (it == col.end() || it->second >= fields.size()) return {};
                return fields[it->second];
            };
            if (fields.size() != header.size())
                throw SchemaError("CSV row has " + std::to_string(fields.size()) +
                                      " fields, header has " + std::to_string(header.size()),
                                  ln);
            MemeRecord rec;
            rec.source_line = ln;
            rec.id = cell("id");
            rec.image_ref = cell("image");
            rec.ocr_text = cell("ocr_text");
            if (rec.id.empty()) throw SchemaError("id must be non-empty", ln);
            rec.label = detail::parse_label_text(cell("label"), ln);
            if (std::string sp = cell("split"); !sp.empty()) {
                auto parsed = parse_split(sp);
                if (!parsed)
                    throw SchemaError("split must be train, val, or test, got \"" + sp + "\"",
                                      ln);
                rec.split = *parsed;
            }
            add(std::move(rec));
        }
    } else {
        for (const auto& [ln, text] : lines) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError(std::string("invalid JSON: ") + e.what(), ln);
            }
            add(detail::record_from_json(j, ln));
        }
    }
    return mf;
}

struct SplitFractions {
    double train = 0.85;
    double val = 0.05;
    double test = 0.10;
};

struct SplitResult {
    std::vector<MemeRecord> train;
    std::vector<MemeRecord> val;
    std::vector<MemeRecord> test;
};

/// Predefined tags win: a fully tagged manifest partitions by its tags and
/// the fractions and seed are ignored. Untagged manifests get a seeded
/// shuffle and contiguous floor-sized cuts, remainder to train; partitions
/// keep file order. Mixing tagged and untagged records is an error.
inline SplitResult split(const Manifest& mf, const SplitFractions& fr, std::uint64_t seed) {
    std::size_t tagged = 0;
    for (const auto& r : mf.records)
        if (r.split) ++tagged;

    SplitResult out;
    if (tagged == mf.records.size() && tagged > 0) {
        for (const auto& r : mf.records) {
            switch (*r.split) {
                case Split::kTrain: out.train.push_back(r); break;
                case Split::kVal: out.val.push_back(r); break;
                case Split::kTest: out.test.push_back(r); break;
            }
        }
        return out;
    }
    if (tagged != 0)
        throw ConfigError("manifest mixes tagged and untagged split fields (" +
                          std::to_string(tagged) + " of " + std::to_string(mf.records.size()) +
                          " tagged)");

    for (double f : {fr.train, fr.val, fr.test})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0,1]");
    if (std::abs(fr.train + fr.val + fr.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");

    const std::size_t n = mf.records.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // Hand-rolled Fisher-Yates: mt19937_64 output is portable, the standard
    // shuffle and distributions are not.
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }

    const std::size_t n_val = static_cast<std::size_t>(std::floor(fr.val * static_cast<double>(n)));
    const std::size_t n_test =
        static_cast<std::size_t>(std::floor(fr.test * static_cast<double>(n)));
    const std::size_t n_train = n - n_val - n_test;

    auto take = [&](std::size_t begin, std::size_t count) {
        std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                      idx.begin() + static_cast<std::ptrdiff_t>(begin + count));
        std::sort(part.begin(), part.end());
        std::vector<MemeRecord> recs;
        recs.reserve(count);
        for (std::size_t i : part) recs.push_back(mf.records[i]);
        return recs;
    };
    out.train = take(0, n_train);
    out.val = take(n_train, n_val);
    out.test = take(n_train + n_val, n_test);
    return out;
}

}  // namespace floop
