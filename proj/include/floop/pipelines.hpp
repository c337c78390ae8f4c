#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "floop/agents.hpp"
#include "floop/backends.hpp"
#include "floop/config.hpp"
#include "floop/controller.hpp"
#include "floop/digest.hpp"
#include "floop/errors.hpp"
#include "floop/evalmetrics.hpp"
#include "floop/knowledge_base.hpp"
#include "floop/manifest.hpp"
#include "floop/prompt_mapper.hpp"
#include "floop/trace.hpp"

namespace floop {

namespace detail {

inline double now_ts() {
    return std::chrono::duration<double>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline nlohmann::json control_json(const ControlVector& c) {
    auto flat = c.flatten();
    return nlohmann::json(std::vector<double>(flat.begin(), flat.end()));
}

inline nlohmann::json arr3(const std::array<double, 3>& a) {
    return nlohmann::json{a[0], a[1], a[2]};
}

inline bool skippable(const std::exception_ptr& ep) {
    try {
        std::rethrow_exception(ep);
    } catch (const ParseError&) {
        return true;
    } catch (const BackendError&) {
        return true;
    } catch (const EmbeddingError&) {
        return true;
    } catch (...) {
        return false;
    }
}

}  // namespace detail

struct LearnResult {
    KnowledgeBase kb;
    RunTrace trace;
    PidState final_pid;
};

/// Closed-loop learning: strictly sequential, judge in the loop, control
/// carried across samples, one KB entry per completed sample. The model
/// itself never changes; all adaptation lands in the control vector and
/// the KB.
inline LearnResult closed_loop_learn(const std::vector<MemeRecord>& train_set,
                                     const RunConfig& cfg, ModelBackend& chat,
                                     EmbeddingBackend& embedder) {
    for (const auto& r : train_set) {
        if (!r.label)
            throw MissingLabelError("train record \"" + r.id + "\" has no label (line " +
                                    std::to_string(r.source_line) + ")");
    }

    LearnResult out;
    out.kb = KnowledgeBase::create(cfg.paths.kb);
    PidState pid = cfg.initial_pid_state();
    ControlVector c_carry;  // zero: the first prompt is the neutral one

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.run.shuffle_train) {
        std::mt19937_64 rng(cfg.run.seed);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng() % i]);
    }

    const GProjectionConfig proj = cfg.retrieval.projection();
    for (std::size_t si = 0; si < order.size(); ++si) {
        const MemeRecord& meme = train_set[order[si]];
        try {
            for (int iter = 0; iter < cfg.run.refine_iters; ++iter) {
                const bool final_iter = iter == cfg.run.refine_iters - 1;
                const GuidancePrompt prompt = map_control_to_prompt(c_carry, cfg.mapper);
                const ReasonResult rr =
                    reason(meme, prompt, chat, embedder, cfg.agent.format, cfg.backend.max_tokens);
                const JudgeVerdict verdict =
                    judge(meme, rr.pred, chat, embedder, cfg.agent.judge, cfg.backend.max_tokens);

                double u = 0.0;
                double integral = pid.integral;
                double derivative_term = 0.0;
                if (!cfg.ablation.zero_controller) {
                    // Only the final iteration's error enters the persistent
                    // state, so one sample never double-counts in the integral.
                    const PidStepResult step = pid_step(pid, cfg.gains, verdict.error);
                    u = step.u;
                    integral = step.state.integral;
                    derivative_term = step.derivative_term;
                    if (final_iter) pid = step.state;
                }

                const FeedbackVector f = cfg.ablation.zero_feedback ? kZero3 : verdict.f;
                MemorySignal k = kZero3;
                std::vector<RetrievalHit> hits;
                if (cfg.run.train_retrieval && !cfg.ablation.disable_retrieval &&
                    out.kb.size() > 0) {
                    hits = out.kb.retrieve_top_k(rr.emb, cfg.retrieval.top_k);
                    k = summarize(hits, proj);
                }
                c_carry = assemble_training_control(u, f, k);

                nlohmann::json rec{{"ts", detail::now_ts()},
                                   {"phase", "train"},
                                   {"sample_id", meme.id},
                                   {"sample_index", static_cast<std::int64_t>(si)},
                                   {"iteration", iter},
                                   {"prompt", prompt.text},
                                   {"directives", directive_report(prompt)},
                                   {"score", rr.pred.score},
                                   {"clamped", rr.pred.clamped},
                                   {"rationale_hash", fnv1a64_hex(rr.pred.rationale)},
                                   {"raw_output", rr.pred.raw_output},
                                   {"critique", verdict.critique},
                                   {"error", verdict.error},
                                   {"u", u},
                                   {"f", detail::arr3(f)},
                                   {"k", detail::arr3(k)},
                                   {"control", detail::control_json(c_carry)},
                                   {"integral", integral},
                                   {"derivative_term", derivative_term}};
                if (!hits.empty()) {
                    nlohmann::json retrieved = nlohmann::json::array();
                    for (const auto& h : hits)
                        retrieved.push_back({{"id", h.entry->id}, {"sim", h.similarity}});
                    rec["retrieved"] = std::move(retrieved);
                }
                out.trace.append(std::move(rec));

                if (final_iter) {
                    KbEntry entry;
                    entry.id = meme.id;
                    entry.emb = rr.emb;
                    entry.reasoning = rr.pred.rationale;
                    entry.feedback = verdict.critique;
                    entry.meta = nlohmann::json{{"label", *meme.label},
                                                {"score", rr.pred.score},
                                                {"split", "train"}};
                    out.kb.append(entry);
                }
            }
        } catch (const MissingLabelError&) {
            throw;
        } catch (...) {
            std::exception_ptr ep = std::current_exception();
            if (!detail::skippable(ep) || cfg.run.on_error == "fail") std::rethrow_exception(ep);
            std::string reason_text;
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                reason_text = e.what();
            }
            out.trace.append(nlohmann::json{{"ts", detail::now_ts()},
                                            {"phase", "train"},
                                            {"sample_id", meme.id},
                                            {"sample_index", static_cast<std::int64_t>(si)},
                                            {"event", "skipped"},
                                            {"reason", reason_text}});
        }
    }
    out.final_pid = pid;
    return out;
}

struct InferResult {
    std::vector<std::optional<Prediction>> predictions;  // aligned with the input set
    RunTrace trace;
};

/// Open-loop inference: per-sample independent, KB read-only. The base pass
/// exists to produce the query embedding; its prediction is recorded and
/// discarded.
inline InferResult open_loop_infer(const std::vector<MemeRecord>& test_set,
                                   const KnowledgeBase& kb, const RunConfig& cfg,
                                   ModelBackend& chat, EmbeddingBackend& embedder) {
    InferResult out;
    out.predictions.resize(test_set.size());

    const GProjectionConfig proj = cfg.retrieval.projection();
    std::mutex mu;  // guards trace + predictions
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr first_error;

    auto run_sample = [&](std::size_t i) {
        const MemeRecord& meme = test_set[i];

        const ControlVector base_control{};  // zero
        const GuidancePrompt base_prompt = map_control_to_prompt(base_control, cfg.mapper);
        const ReasonResult base =
            reason(meme, base_prompt, chat, embedder, cfg.agent.format, cfg.backend.max_tokens);

        nlohmann::json base_rec{{"ts", detail::now_ts()},
                                {"phase", "infer_base"},
                                {"sample_id", meme.id},
                                {"sample_index", static_cast<std::int64_t>(i)},
                                {"iteration", 0},
                                {"prompt", base_prompt.text},
                                {"directives", directive_report(base_prompt)},
                                {"score", base.pred.score},
                                {"clamped", base.pred.clamped},
                                {"rationale_hash", fnv1a64_hex(base.pred.rationale)},
                                {"raw_output", base.pred.raw_output},
                                {"u", 0.0},
                                {"f", detail::arr3(kZero3)},
                                {"k", detail::arr3(kZero3)},
                                {"control", detail::control_json(base_control)}};

        std::vector<RetrievalHit> hits;
        if (!cfg.ablation.disable_retrieval && kb.size() > 0)
            hits = kb.retrieve_top_k(base.emb, cfg.retrieval.top_k);
        const MemorySignal k = summarize(hits, proj);
        ControlVector control = assemble_inference_control(k, cfg.policy);
        if (cfg.ablation.zero_controller) control.u = 0.0;

        const GuidancePrompt final_prompt = map_control_to_prompt(control, cfg.mapper);
        const ReasonResult fin =
            reason(meme, final_prompt, chat, embedder, cfg.agent.format, cfg.backend.max_tokens);

        nlohmann::json retrieved = nlohmann::json::array();
        for (const auto& h : hits)
            retrieved.push_back({{"id", h.entry->id}, {"sim", h.similarity}});
        nlohmann::json final_rec{{"ts", detail::now_ts()},
                                 {"phase", "infer_final"},
                                 {"sample_id", meme.id},
                                 {"sample_index", static_cast<std::int64_t>(i)},
                                 {"iteration", 0},
                                 {"prompt", final_prompt.text},
                                 {"directives", directive_report(final_prompt)},
                                 {"score", fin.pred.score},
                                 {"clamped", fin.pred.clamped},
                                 {"rationale_hash", fnv1a64_hex(fin.pred.rationale)},
                                 {"raw_output", fin.pred.raw_output},
                                 {"u", control.u},
                                 {"f", detail::arr3(control.f)},
                                 {"k", detail::arr3(control.k)},
                                 {"control", detail::control_json(control)},
                                 {"retrieved", std::move(retrieved)}};

        std::lock_guard<std::mutex> lock(mu);
        out.trace.append(std::move(base_rec));
        out.trace.append(std::move(final_rec));
        out.predictions[i] = fin.pred;
    };

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= test_set.size() || abort.load()) return;
            try {
                run_sample(i);
            } catch (...) {
                std::exception_ptr ep = std::current_exception();
                if (!detail::skippable(ep) || cfg.run.on_error == "fail") {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = ep;
                    abort.store(true);
                    return;
                }
                std::string reason_text;
                try {
                    std::rethrow_exception(ep);
                } catch (const std::exception& e) {
                    reason_text = e.what();
                }
                std::lock_guard<std::mutex> lock(mu);
                out.trace.append(nlohmann::json{{"ts", detail::now_ts()},
                                                {"phase", "infer"},
                                                {"sample_id", test_set[i].id},
                                                {"sample_index", static_cast<std::int64_t>(i)},
                                                {"event", "skipped"},
                                                {"reason", reason_text}});
            }
        }
    };

    const std::size_t n_workers =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.backend.in_flight), test_set.size());
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    out.trace.sort_by_sample();
    return out;
}

/// Metrics for the labeled samples that produced predictions.
inline MetricsReport evaluate_inference(const std::vector<MemeRecord>& test_set,
                                        const InferResult& result, double threshold) {
    std::vector<int> labels;
    std::vector<double> scores;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        if (!test_set[i].label || !result.predictions[i]) continue;
        labels.push_back(*test_set[i].label);
        scores.push_back(result.predictions[i]->score);
    }
    return evaluate_run(labels, scores, threshold);
}

/// One inference run per retrieval depth, each row evaluated with the same
/// threshold.
inline std::vector<MetricsReport> k_sweep(const std::vector<MemeRecord>& test_set,
                                          const KnowledgeBase& kb, const RunConfig& cfg,
                                          ModelBackend& chat, EmbeddingBackend& embedder,
                                          const std::vector<int>& ks) {
    if (ks.empty()) throw ConfigError("sweep needs at least one K");
    for (const auto& r : test_set) {
        if (!r.label)
            throw MissingLabelError("sweep requires labeled records: \"" + r.id + "\" (line " +
                                    std::to_string(r.source_line) + ")");
    }
    std::vector<MetricsReport> rows;
    rows.reserve(ks.size());
    for (int k : ks) {
        if (k < 1) throw ConfigError("sweep K values must be >= 1");
        RunConfig cfg_k = cfg;
        cfg_k.retrieval.top_k = static_cast<std::size_t>(k);
        const InferResult res = open_loop_infer(test_set, kb, cfg_k, chat, embedder);
        MetricsReport row = evaluate_inference(test_set, res, cfg.run.threshold);
        row.k = k;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace floop
