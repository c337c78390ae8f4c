#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/controller.hpp"
#include "floop/digest.hpp"
#include "floop/embedding.hpp"
#include "floop/errors.hpp"

namespace floop {

/// One judged experience: what the agent argued, and how it was corrected.
struct KbEntry {
    std::string id;
    EmbeddingVector emb;
    std::string reasoning;
    std::string feedback;
    nlohmann::json meta = nlohmann::json::object();
};

struct RetrievalHit {
    const KbEntry* entry = nullptr;
    double similarity = 0.0;
};

/// How d-dimensional embeddings are collapsed into the 3-dimensional memory signal.
struct GProjectionConfig {
    enum class Mode { kTruncate, kRandomProjection };
    Mode mode = Mode::kTruncate;
    std::uint64_t seed = 17;
};

namespace detail {
// Stateless matrix entry for the random-projection mode: uniform [-1,1),
// keyed by (seed, row, col) so the matrix is fixed for a given seed.
inline double projection_entry(std::uint64_t seed, std::size_t row, std::size_t col) {
    std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(row) + 1)) ^
                      (0xC2B2AE3D27D4EB4Full * (static_cast<std::uint64_t>(col) + 1));
    return unit_interval(splitmix64(s));
}
}  // namespace detail

/// g: R^d -> R^3. L2-normalizes, then either truncates to the first three
/// components or applies the seeded fixed 3xd projection.
inline MemorySignal project_g(const EmbeddingVector& emb, const GProjectionConfig& cfg = {}) {
    if (emb.dim() < 3)
        throw DimensionTooSmallError("project_g: need dim >= 3, got " + std::to_string(emb.dim()));
    const double n = emb.norm();
    if (n == 0.0) throw ZeroNormError("project_g: zero-norm embedding");
    MemorySignal out = kZero3;
    if (cfg.mode == GProjectionConfig::Mode::kTruncate) {
        out = {emb.values[0] / n, emb.values[1] / n, emb.values[2] / n};
    } else {
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < emb.dim(); ++c)
                s += detail::projection_entry(cfg.seed, r, c) * (emb.values[c] / n);
            out[r] = s;
        }
    }
    return out;
}

/// Unweighted mean of g over the retrieved embeddings; empty retrieval maps to zero.
inline MemorySignal summarize(const std::vector<RetrievalHit>& hits,
                              const GProjectionConfig& cfg = {}) {
    if (hits.empty()) return kZero3;
    MemorySignal acc = kZero3;
    for (const auto& h : hits) {
        MemorySignal g = project_g(h.entry->emb, cfg);
        for (std::size_t i = 0; i < 3; ++i) acc[i] += g[i];
    }
    for (double& v : acc) v /= static_cast<double>(hits.size());
    return acc;
}

/// Append-only store with exact linear-scan retrieval and JSONL persistence.
/// First file line is a header {"dim": d, "schema": 1}; each further line is
/// one entry. No operation removes or mutates an entry.
class KnowledgeBase {
  public:
    KnowledgeBase() = default;

    /// Fresh store backed by a file (any existing file is discarded; a run owns
    /// its KB file). The header is written on the first append.
    static KnowledgeBase create(std::string path) {
        KnowledgeBase kb;
        kb.path_ = std::move(path);
        if (!kb.path_.empty()) std::ofstream(kb.path_, std::ios::trunc);
        return kb;
    }

    static KnowledgeBase load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw SchemaError("cannot open knowledge base file: " + path);
        KnowledgeBase kb;
        kb.path_ = path;
        std::string line;
        std::size_t lineno = 0;
        bool have_header = false;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError(std::string("knowledge base: invalid JSON: ") + e.what(),
                                  lineno);
            }
            if (!have_header) {
                if (!j.is_object() || !j.contains("schema") || !j.contains("dim"))
                    throw SchemaError("knowledge base: missing header {schema, dim}", lineno);
                if (j["schema"].get<int>() != kSchemaVersion)
                    throw SchemaError("knowledge base: unsupported schema version", lineno);
                kb.dim_ = j["dim"].get<std::size_t>();
                have_header = true;
                continue;
            }
            KbEntry e;
            try {
                e.id = j.at("id").get<std::string>();
                e.emb.values = j.at("emb").get<std::vector<double>>();
                e.reasoning = j.at("reasoning").get<std::string>();
                e.feedback = j.at("feedback").get<std::string>();
                e.meta = j.value("meta", nlohmann::json::object());
            } catch (const nlohmann::json::exception& e2) {
                throw SchemaError(std::string("knowledge base: bad entry: ") + e2.what(), lineno);
            }
            if (e.emb.dim() != kb.dim_)
                throw DimensionMismatchError("knowledge base: entry dim " +
                                             std::to_string(e.emb.dim()) + " != header dim " +
                                             std::to_string(kb.dim_) + " (line " +
                                             std::to_string(lineno) + ")");
            kb.insert(std::move(e));
        }
        if (!have_header && lineno > 0)
            throw SchemaError("knowledge base: missing header line", 1);
        kb.file_has_header_ = have_header;
        kb.file_entry_count_ = kb.entries_.size();
        return kb;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    /// 0 until the first append or a loaded header fixes it.
    std::size_t dimension() const { return dim_; }
    const std::string& path() const { return path_; }
    const std::vector<KbEntry>& entries() const { return entries_; }

    const KbEntry* find(const std::string& id) const {
        for (const auto& e : entries_)
            if (e.id == id) return &e;
        return nullptr;
    }

    /// Appends and, when file-backed, makes the line durable before returning.
    void append(KbEntry entry) {
        if (entry.id.empty()) throw SchemaError("knowledge base: empty entry id");
        if (!entry.emb.is_finite())
            throw NonFiniteError("knowledge base: non-finite embedding for id " + entry.id);
        if (ids_.count(entry.id))
            throw DuplicateIdError("knowledge base: duplicate id " + entry.id);
        if (entries_.empty() && dim_ == 0) {
            if (entry.emb.dim() == 0)
                throw DimensionMismatchError("knowledge base: zero-dimensional embedding");
            dim_ = entry.emb.dim();
        } else if (entry.emb.dim() != dim_) {
            throw DimensionMismatchError("knowledge base: entry dim " +
                                         std::to_string(entry.emb.dim()) + " != store dim " +
                                         std::to_string(dim_));
        }
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            if (!out) throw Error("knowledge base: cannot open for append: " + path_);
            if (file_entry_count_ == 0 && !file_has_header_) {
                out << header_json().dump() << '\n';
                file_has_header_ = true;
            }
            out << entry_json(entry).dump() << '\n';
            out.flush();
            if (!out) throw Error("knowledge base: write failed: " + path_);
            ++file_entry_count_;
        }
        insert(std::move(entry));
    }

    /// Exact top-K by cosine similarity; ties broken by insertion order,
    /// earliest first. Zero-norm stored entries are skipped, not fatal.
    /// Hits borrow from the store; a later append may invalidate them.
    std::vector<RetrievalHit> retrieve_top_k(const EmbeddingVector& q, std::size_t k) const {
        if (k == 0) throw ConfigError("retrieve_top_k: K must be >= 1");
        if (!q.is_finite()) throw NonFiniteError("retrieve_top_k: non-finite query");
        const double qn = q.norm();
        if (qn == 0.0) throw ZeroNormError("retrieve_top_k: zero-norm query");
        if (entries_.empty()) return {};
        if (q.dim() != dim_)
            throw DimensionMismatchError("retrieve_top_k: query dim " + std::to_string(q.dim()) +
                                         " != store dim " + std::to_string(dim_));

        struct Scored {
            double sim;
            std::size_t idx;
        };
        std::vector<Scored> scored;
        scored.reserve(entries_.size());
        std::size_t skipped = 0;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (norms_[i] == 0.0) {
                ++skipped;
                continue;
            }
            scored.push_back({dot(q, entries_[i].emb) / (qn * norms_[i]), i});
        }
        if (skipped > 0)
            std::cerr << "floop: retrieval skipped " << skipped
                      << " zero-norm knowledge base entr" << (skipped == 1 ? "y" : "ies")
                      << "\n";

        const std::size_t take = std::min(k, scored.size());
        auto better = [](const Scored& a, const Scored& b) {
            return a.sim > b.sim || (a.sim == b.sim && a.idx < b.idx);
        };
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                          scored.end(), better);

        std::vector<RetrievalHit> hits;
        hits.reserve(take);
        for (std::size_t i = 0; i < take; ++i)
            hits.push_back({&entries_[scored[i].idx], scored[i].sim});
        return hits;
    }

    /// Rewrites the full store canonically (header + entries, one line each).
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw Error("knowledge base: cannot open for write: " + path);
        if (dim_ != 0 || !entries_.empty()) out << header_json().dump() << '\n';
        for (const auto& e : entries_) out << entry_json(e).dump() << '\n';
        out.flush();
        if (!out) throw Error("knowledge base: write failed: " + path);
    }

    struct Stats {
        std::size_t size = 0;
        std::size_t dim = 0;
        std::map<std::string, std::size_t> split_counts;
        // norm percentiles at 0/25/50/75/100 (nearest-rank), empty store -> zeros
        std::array<double, 5> norm_percentiles{};
    };

    Stats stats() const {
        Stats s;
        s.size = entries_.size();
        s.dim = dim_;
        for (const auto& e : entries_) {
            if (e.meta.is_object() && e.meta.contains("split"))
                ++s.split_counts[e.meta["split"].get<std::string>()];
        }
        if (!entries_.empty()) {
            std::vector<double> ns = norms_;
            std::sort(ns.begin(), ns.end());
            const std::size_t n = ns.size();
            auto rank = [&](double p) {
                std::size_t i = static_cast<std::size_t>(p * static_cast<double>(n - 1) + 0.5);
                return ns[std::min(i, n - 1)];
            };
            s.norm_percentiles = {rank(0.0), rank(0.25), rank(0.5), rank(0.75), rank(1.0)};
        }
        return s;
    }

    static nlohmann::json entry_json(const KbEntry& e) {
        return nlohmann::json{{"id", e.id},
                              {"emb", e.emb.values},
                              {"reasoning", e.reasoning},
                              {"feedback", e.feedback},
                              {"meta", e.meta}};
    }

    static constexpr int kSchemaVersion = 1;

  private:
    nlohmann::json header_json() const {
        return nlohmann::json{{"schema", kSchemaVersion}, {"dim", dim_}};
    }

    void insert(KbEntry e) {
        ids_.insert(e.id);
        norms_.push_back(e.emb.norm());
        entries_.push_back(std::move(e));
    }

    std::string path_;
    std::size_t dim_ = 0;
    std::vector<KbEntry> entries_;
    std::vector<double> norms_;
    std::unordered_set<std::string> ids_;
    std::size_t file_entry_count_ = 0;
    bool file_has_header_ = false;
};

}  // namespace floop
