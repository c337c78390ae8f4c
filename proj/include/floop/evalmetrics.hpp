#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/errors.hpp"

namespace floop {

struct ConfusionCounts {
    long long tp = 0;
    long long fp = 0;
    long long tn = 0;
    long long fn = 0;

    long long positives() const { return tp + fn; }  // N1
    long long negatives() const { return tn + fp; }  // N0
    long long total() const { return tp + fp + tn + fn; }
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double mcc = 0.0;
    double rq = 0.0;
    ConfusionCounts counts;
    double threshold = 0.5;
    std::optional<int> k;  // retrieval depth, when the report belongs to a sweep row
};

/// Ties go positive: score >= threshold maps to 1.
inline int binarize(double score, double threshold) {
    if (!(score >= 0.0 && score <= 1.0))
        throw RangeError("score outside [0,1]: " + std::to_string(score));
    return score >= threshold ? 1 : 0;
}

inline ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<int>& preds) {
    if (labels.size() != preds.size())
        throw LengthMismatchError("labels size " + std::to_string(labels.size()) +
                                  " != preds size " + std::to_string(preds.size()));
    if (labels.empty()) throw EmptyInputError("confusion requires at least one sample");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i], p = preds[i];
        if ((y != 0 && y != 1) || (p != 0 && p != 1))
            throw RangeError("labels and predictions must be 0 or 1");
        if (y == 1 && p == 1) ++c.tp;
        else if (y == 1 && p == 0) ++c.fn;
        else if (y == 0 && p == 1) ++c.fp;
        else ++c.tn;
    }
    return c;
}

inline double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyInputError("accuracy over zero samples");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// Unweighted mean of per-class F1; a class with no true and no predicted
/// members contributes 0.
inline double macro_f1(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyInputError("macro_f1 over zero samples");
    auto f1 = [](long long tp, long long fp, long long fn) {
        long long denom = 2 * tp + fp + fn;
        return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    };
    return (f1(c.tp, c.fp, c.fn) + f1(c.tn, c.fn, c.fp)) / 2.0;
}

inline double mcc(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyInputError("mcc over zero samples");
    double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / denom;
}

/// Balanced accuracy over the two classes.
inline double rq(const ConfusionCounts& c) {
    if (c.positives() == 0 || c.negatives() == 0)
        throw OneClassOnlyError("rq needs both classes present (N1=" +
                                std::to_string(c.positives()) + ", N0=" +
                                std::to_string(c.negatives()) + ")");
    return (static_cast<double>(c.tp) / static_cast<double>(c.positives()) +
            static_cast<double>(c.tn) / static_cast<double>(c.negatives())) /
           2.0;
}

inline MetricsReport evaluate_run(const std::vector<int>& labels,
                                  const std::vector<double>& scores, double threshold) {
    if (labels.size() != scores.size())
        throw LengthMismatchError("labels size " + std::to_string(labels.size()) +
                                  " != scores size " + std::to_string(scores.size()));
    std::vector<int> preds;
    preds.reserve(scores.size());
    for (double s : scores) preds.push_back(binarize(s, threshold));
    MetricsReport r;
    r.threshold = threshold;
    r.counts = confusion(labels, preds);
    r.accuracy = accuracy(r.counts);
    r.macro_f1 = macro_f1(r.counts);
    r.mcc = mcc(r.counts);
    r.rq = rq(r.counts);
    return r;
}

inline nlohmann::json report_json(const MetricsReport& r) {
    nlohmann::json j{{"accuracy", r.accuracy},
                     {"macro_f1", r.macro_f1},
                     {"mcc", r.mcc},
                     {"rq", r.rq},
                     {"counts",
                      {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn},
                       {"fn", r.counts.fn}}},
                     {"threshold", r.threshold}};
    if (r.k) j["k"] = *r.k;
    return j;
}

/// Aligned text table, one row per report, Table-style column order.
inline std::string render_metrics_table(const std::vector<MetricsReport>& rows) {
    const bool with_k = !rows.empty() && rows.front().k.has_value();
    std::string out;
    char buf[160];
    if (with_k) {
        std::snprintf(buf, sizeof(buf), "%4s  %8s  %8s  %8s  %8s\n", "K", "Accuracy", "Macro-F1",
                      "MCC", "RQ");
        out += buf;
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%4d  %8.4f  %8.4f  %8.4f  %8.4f\n", r.k.value_or(0),
                          r.accuracy, r.macro_f1, r.mcc, r.rq);
            out += buf;
        }
    } else {
        std::snprintf(buf, sizeof(buf), "%8s  %8s  %8s  %8s\n", "Accuracy", "Macro-F1", "MCC",
                      "RQ");
        out += buf;
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%8.4f  %8.4f  %8.4f  %8.4f\n", r.accuracy,
                          r.macro_f1, r.mcc, r.rq);
            out += buf;
        }
    }
    return out;
}

}  // namespace floop
