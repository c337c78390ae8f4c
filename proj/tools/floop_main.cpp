#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <floop/floop.hpp>

namespace {

using namespace floop;

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        std::size_t comma = csv.find(',', start);
        std::string item = csv.substr(
            start, comma == std::string::npos ? std::string::npos : comma - start);
        auto v = floop::detail::parse_number(floop::detail::trim(item));
        if (!v) throw ConfigError(std::string(what) + ": not a number: \"" + item + "\"");
        out.push_back(*v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
    return out;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    for (double v : parse_double_list(csv, what)) {
        int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ConfigError(std::string(what) + ": not an integer: " + std::to_string(v));
        out.push_back(i);
    }
    return out;
}

KnowledgeBase load_kb_or_empty(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream probe(path);
    if (!probe.good()) return {};
    probe.close();
    return KnowledgeBase::load(path);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

int cmd_learn(const std::string& config_path) {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.paths.manifest.empty()) throw ConfigError("paths.manifest required for learn");
    Manifest mf = load_manifest(cfg.paths.manifest);
    SplitResult parts = split(mf, cfg.split, cfg.run.seed);

    auto chat = make_chat_backend(cfg);
    auto embedder = make_embedding_backend(cfg);
    LearnResult res = closed_loop_learn(parts.train, cfg, *chat, *embedder);
    res.trace.save(cfg.paths.trace);

    std::cout << "train_samples " << parts.train.size() << "\n"
              << "kb_entries " << res.kb.size() << "\n"
              << "kb_path " << cfg.paths.kb << "\n"
              << "trace_records " << res.trace.size() << "\n"
              << "trace_hash " << res.trace.determinism_hash() << "\n";
    return 0;
}

int cmd_infer(const std::string& config_path, std::optional<int> k_override) {
    RunConfig cfg = RunConfig::load(config_path);
    if (k_override) {
        if (*k_override < 1) throw ConfigError("--k must be >= 1");
        cfg.retrieval.top_k = static_cast<std::size_t>(*k_override);
    }
    if (cfg.paths.manifest.empty()) throw ConfigError("paths.manifest required for infer");
    Manifest mf = load_manifest(cfg.paths.manifest);
    SplitResult parts = split(mf, cfg.split, cfg.run.seed);

    KnowledgeBase kb = load_kb_or_empty(cfg.paths.kb);
    auto chat = make_chat_backend(cfg);
    auto embedder = make_embedding_backend(cfg);
    InferResult res = open_loop_infer(parts.test, kb, cfg, *chat, *embedder);
    res.trace.save(cfg.paths.trace);

    std::size_t ok = 0, labeled = 0;
    for (std::size_t i = 0; i < parts.test.size(); ++i) {
        if (res.predictions[i]) ++ok;
        if (parts.test[i].label && res.predictions[i]) ++labeled;
    }
    std::cout << "test_samples " << parts.test.size() << "\n"
              << "predictions " << ok << "\n"
              << "trace_records " << res.trace.size() << "\n"
              << "trace_hash " << res.trace.determinism_hash() << "\n";

    nlohmann::json report{{"n", parts.test.size()},
                          {"predicted", ok},
                          {"k", cfg.retrieval.top_k}};
    if (labeled > 0) {
        try {
            MetricsReport m = evaluate_inference(parts.test, res, cfg.run.threshold);
            m.k = static_cast<int>(cfg.retrieval.top_k);
            report["metrics"] = report_json(m);
            std::cout << render_metrics_table({m});
        } catch (const OneClassOnlyError& e) {
            report["metrics_note"] = e.what();
            std::cout << "metrics skipped: " << e.what() << "\n";
        }
    } else {
        report["metrics_note"] = "no labeled predictions; metrics omitted";
    }
    if (!cfg.paths.report.empty()) write_text(cfg.paths.report, report.dump(2) + "\n");
    return 0;
}

int cmd_eval(const std::string& trace_path, const std::string& manifest_path, double threshold,
             const std::string& report_path) {
    RunTrace trace = RunTrace::load(trace_path);
    Manifest mf = load_manifest(manifest_path);

    std::unordered_map<std::string, double> scores;
    for (const auto& rec : trace.records()) {
        if (rec.value("phase", std::string()) != "infer_final") continue;
        if (!rec.contains("sample_id") || !rec.contains("score")) continue;
        scores[rec.at("sample_id").get<std::string>()] = rec.at("score").get<double>();
    }
    if (scores.empty()) throw SchemaError("trace has no inference records with scores", 0);

    std::vector<int> labels;
    std::vector<double> preds;
    for (const auto& r : mf.records) {
        auto it = scores.find(r.id);
        if (it == scores.end() || !r.label) continue;
        labels.push_back(*r.label);
        preds.push_back(it->second);
    }
    if (labels.empty()) throw ConfigError("no overlap between labeled manifest ids and trace");

    MetricsReport m = evaluate_run(labels, preds, threshold);
    std::cout << "evaluated " << labels.size() << "\n" << render_metrics_table({m});
    if (!report_path.empty()) write_text(report_path, report_json(m).dump(2) + "\n");
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& ks_csv) {
    RunConfig cfg = RunConfig::load(config_path);
    std::vector<int> ks = parse_int_list(ks_csv, "--ks");
    if (cfg.paths.manifest.empty()) throw ConfigError("paths.manifest required for sweep");
    Manifest mf = load_manifest(cfg.paths.manifest);
    SplitResult parts = split(mf, cfg.split, cfg.run.seed);

    KnowledgeBase kb = load_kb_or_empty(cfg.paths.kb);
    auto chat = make_chat_backend(cfg);
    auto embedder = make_embedding_backend(cfg);
    std::vector<MetricsReport> rows = k_sweep(parts.test, kb, cfg, *chat, *embedder, ks);

    std::cout << render_metrics_table(rows);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(report_json(r));
    if (!cfg.paths.report.empty()) write_text(cfg.paths.report, arr.dump(2) + "\n");
    return 0;
}

int cmd_kb_stats(const std::string& kb_path) {
    KnowledgeBase kb = KnowledgeBase::load(kb_path);
    KnowledgeBase::Stats s = kb.stats();
    nlohmann::json j{{"size", s.size},
                     {"dim", s.dim},
                     {"split_counts", s.split_counts},
                     {"norm_percentiles",
                      {s.norm_percentiles[0], s.norm_percentiles[1], s.norm_percentiles[2],
                       s.norm_percentiles[3], s.norm_percentiles[4]}}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_kb_inspect(const std::string& kb_path, const std::string& id) {
    KnowledgeBase kb = KnowledgeBase::load(kb_path);
    const KbEntry* e = kb.find(id);
    if (!e) {
        std::cerr << "no entry with id \"" << id << "\"\n";
        return 1;
    }
    std::cout << KnowledgeBase::entry_json(*e).dump(2) << "\n";
    return 0;
}

int cmd_pid_sim(const std::string& errors_csv, const std::string& gains_csv,
                const std::string& bound_text) {
    std::vector<double> errors = parse_double_list(errors_csv, "--errors");
    std::vector<double> g = parse_double_list(gains_csv, "--gains");
    if (g.size() != 3) throw ConfigError("--gains needs exactly kp,ki,kd");
    PidGains gains{g[0], g[1], g[2]};

    PidState state;
    if (bound_text == "inf") {
        state.integral_bound = std::numeric_limits<double>::infinity();
    } else if (!bound_text.empty()) {
        auto b = floop::detail::parse_number(bound_text);
        if (!b || *b <= 0) throw ConfigError("--integral-bound must be positive or inf");
        state.integral_bound = *b;
    }

    std::cout << "step,error,integral,derivative_term,u\n";
    for (std::size_t i = 0; i < errors.size(); ++i) {
        PidStepResult r = pid_step(state, gains, errors[i]);
        state = r.state;
        std::cout << i + 1 << "," << nlohmann::json(errors[i]).dump() << ","
                  << nlohmann::json(state.integral).dump() << ","
                  << nlohmann::json(r.derivative_term).dump() << ","
                  << nlohmann::json(r.u).dump() << "\n";
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    RunConfig cfg = RunConfig::load(config_path);
    std::cout << "config: ok\n";

    if (!cfg.paths.manifest.empty()) {
        Manifest mf = load_manifest(cfg.paths.manifest);
        SplitResult parts = split(mf, cfg.split, cfg.run.seed);
        std::cout << "manifest: " << mf.records.size() << " records (train " << parts.train.size()
                  << ", val " << parts.val.size() << ", test " << parts.test.size() << ")\n";
    } else {
        std::cout << "manifest: (not set)\n";
    }

    if (cfg.backend.kind == "http") {
        auto url = floop::detail::split_base_url(cfg.backend.base_url);
        httplib::Client probe(url.host);
        probe.set_connection_timeout(std::chrono::seconds(5));
        auto res = probe.Get(url.path.empty() ? "/" : url.path);
        if (!res) throw ConfigError("backend unreachable: " + cfg.backend.base_url);
        std::cout << "backend: reachable (status " << res->status << ")\n";
    } else if (cfg.backend.kind == "scripted") {
        auto script = load_script(cfg.backend.script_path);
        std::cout << "backend: scripted, " << script.size() << " entries\n";
    } else {
        std::cout << "backend: mock\n";
    }
    if (cfg.embedding.kind == "mock") {
        std::cout << "embedding: mock, dim " << cfg.embedding.dim << "\n";
    } else {
        std::cout << "embedding: http, dim " << cfg.embedding.dim << "\n";
    }
    return 0;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DuplicateIdError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MissingLabelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feedback-loop prompt control for meme humor classification"};
    app.require_subcommand(0, 1);

    bool print_defaults = false;
    app.add_flag("--print-default-config", print_defaults,
                 "Print the default configuration as JSON and exit");

    std::string config_path;
    std::optional<int> k_override;
    std::string trace_path, manifest_path, report_path, kb_path, entry_id;
    std::string errors_csv, gains_csv = "1.0,0.5,0.1", bound_text, ks_csv = "1,3,5,10";
    double threshold = 0.5;

    CLI::App* learn = app.add_subcommand("learn", "Closed-loop learning: build the KB");
    learn->add_option("--config", config_path, "Config file")->required();

    CLI::App* infer = app.add_subcommand("infer", "Open-loop inference over the test split");
    infer->add_option("--config", config_path, "Config file")->required();
    infer->add_option("--k", k_override, "Retrieval depth override");

    CLI::App* eval = app.add_subcommand("eval", "Re-score a saved trace against a manifest");
    eval->add_option("--trace", trace_path, "Trace file")->required();
    eval->add_option("--manifest", manifest_path, "Manifest file")->required();
    eval->add_option("--threshold", threshold, "Binarization threshold");
    eval->add_option("--report", report_path, "Write report JSON here");

    CLI::App* sweep = app.add_subcommand("sweep", "Metrics per retrieval depth");
    sweep->add_option("--config", config_path, "Config file")->required();
    sweep->add_option("--ks", ks_csv, "Comma-separated K values");

    CLI::App* kb = app.add_subcommand("kb", "Knowledge base utilities");
    kb->require_subcommand(1);
    CLI::App* kb_stats = kb->add_subcommand("stats", "Print store statistics");
    kb_stats->add_option("--kb", kb_path, "KB file")->required();
    CLI::App* kb_inspect = kb->add_subcommand("inspect", "Print one entry");
    kb_inspect->add_option("--kb", kb_path, "KB file")->required();
    kb_inspect->add_option("--id", entry_id, "Entry id")->required();

    CLI::App* pid_sim = app.add_subcommand("pid-sim", "Offline controller step response (CSV)");
    pid_sim->add_option("--errors", errors_csv, "Comma-separated error sequence")->required();
    pid_sim->add_option("--gains", gains_csv, "kp,ki,kd");
    pid_sim->add_option("--integral-bound", bound_text, "Positive number or inf");

    CLI::App* validate = app.add_subcommand("validate", "Check config, manifest, and backend");
    validate->add_option("--config", config_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (print_defaults) {
        std::cout << floop::RunConfig{}.to_json().dump(2) << "\n";
        return 0;
    }

    if (learn->parsed()) return guarded([&] { return cmd_learn(config_path); });
    if (infer->parsed()) return guarded([&] { return cmd_infer(config_path, k_override); });
    if (eval->parsed())
        return guarded([&] { return cmd_eval(trace_path, manifest_path, threshold, report_path); });
    if (sweep->parsed()) return guarded([&] { return cmd_sweep(config_path, ks_csv); });
    if (kb->parsed()) {
        if (kb_stats->parsed()) return guarded([&] { return cmd_kb_stats(kb_path); });
        if (kb_inspect->parsed())
            return guarded([&] { return cmd_kb_inspect(kb_path, entry_id); });
    }
    if (pid_sim->parsed())
        return guarded([&] { return cmd_pid_sim(errors_csv, gains_csv, bound_text); });
    if (validate->parsed()) return guarded([&] { return cmd_validate(config_path); });

    std::cerr << app.help();
    return 2;
}
