#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/digest.hpp"
#include "floop/errors.hpp"

namespace floop {

/// Append-only run audit: one JSON record per (sample, iteration, phase).
class RunTrace {
  public:
    void append(nlohmann::json rec) { records_.push_back(std::move(rec)); }

    const std::vector<nlohmann::json>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    /// Restores per-sample order after concurrent appends. Stable, so records
    /// of one sample keep their base-then-final order.
    void sort_by_sample() {
        std::stable_sort(records_.begin(), records_.end(),
                         [](const nlohmann::json& a, const nlohmann::json& b) {
                             return a.value("sample_index", std::int64_t{0}) <
                                    b.value("sample_index", std::int64_t{0});
                         });
    }

    /// Content hash with timestamps ignored; equal hashes mean equal runs.
    std::string determinism_hash() const {
        std::uint64_t h = kFnvOffset;
        for (const auto& r : records_) {
            nlohmann::json c = r;
            c.erase("ts");
            h = fnv1a64(c.dump(), h);
            h = fnv1a64("\n", h);
        }
        return to_hex(h);
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw Error("cannot write trace: " + path);
        for (const auto& r : records_) out << r.dump() << "\n";
        out.flush();
        if (!out) throw Error("failed writing trace: " + path);
    }

    static RunTrace load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open trace: " + path);
        RunTrace t;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                t.records_.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw SchemaError(std::string("invalid trace JSON: ") + e.what(), lineno);
            }
        }
        return t;
    }

  private:
    std::vector<nlohmann::json> records_;
};

}  // namespace floop
