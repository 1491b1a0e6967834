#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentibench/common.hpp"
#include "sentibench/corpus.hpp"
#include "sentibench/fixtures.hpp"
#include "sentibench/metrics.hpp"
#include "sentibench/nb.hpp"
#include "sentibench/training.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Experiment configuration (JSON file). The seed is mandatory; everything
// else has documented defaults. Round-trips losslessly through to_json.
// ---------------------------------------------------------------------------

struct TokenizerSettings {
    int vocab_size = 8000;
    int min_freq = 1;
    int max_len = 64;
    bool pair_topic = true;
};

struct ExperimentConfig {
    Subtask subtask = Subtask::B;
    std::string model_kind = "naive_bayes";  // or "encoder"
    std::string train_path, dev_path, test_path;
    TokenizerSettings tokenizer;
    double alpha = 1.0;  // naive_bayes smoothing
    // encoder shape; vocab size, class count and max_len are filled at run time
    int num_layers = 2;
    int hidden_size = 64;
    int num_heads = 4;
    int ffn_size = 128;
    double dropout_rate = 0.1;
    TrainConfig train;
    std::uint64_t seed = 0;
    std::string output_dir = "runs";

    void validate() const {
        if (model_kind != "naive_bayes" && model_kind != "encoder")
            throw ConfigError("model_kind must be naive_bayes or encoder");
        if (train_path.empty() || test_path.empty())
            throw ConfigError("train and test data paths are required");
        if (model_kind == "encoder" && dev_path.empty())
            throw ConfigError("encoder experiments need a dev split for checkpoint selection");
        if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
    }
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["subtask"] = subtask_name(c.subtask);
    j["model_kind"] = c.model_kind;
    j["data"] = {{"train", c.train_path}, {"dev", c.dev_path}, {"test", c.test_path}};
    j["tokenizer"] = {{"vocab_size", c.tokenizer.vocab_size},
                      {"min_freq", c.tokenizer.min_freq},
                      {"max_len", c.tokenizer.max_len},
                      {"pair_topic", c.tokenizer.pair_topic}};
    j["naive_bayes"] = {{"alpha", c.alpha}};
    j["encoder"] = {{"num_layers", c.num_layers},
                    {"hidden_size", c.hidden_size},
                    {"num_heads", c.num_heads},
                    {"ffn_size", c.ffn_size},
                    {"dropout_rate", c.dropout_rate}};
    j["train"] = train_config_to_json(c.train);
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (!j.contains("seed")) throw ConfigError("experiment config must declare a seed");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.subtask = subtask_from_string(j.at("subtask").get<std::string>());
    c.model_kind = j.at("model_kind").get<std::string>();
    const auto& d = j.at("data");
    c.train_path = d.value("train", "");
    c.dev_path = d.value("dev", "");
    c.test_path = d.value("test", "");
    if (j.contains("tokenizer")) {
        const auto& t = j.at("tokenizer");
        c.tokenizer.vocab_size = t.value("vocab_size", c.tokenizer.vocab_size);
        c.tokenizer.min_freq = t.value("min_freq", c.tokenizer.min_freq);
        c.tokenizer.max_len = t.value("max_len", c.tokenizer.max_len);
        c.tokenizer.pair_topic = t.value("pair_topic", c.tokenizer.pair_topic);
    }
    if (j.contains("naive_bayes")) c.alpha = j.at("naive_bayes").value("alpha", c.alpha);
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        c.num_layers = e.value("num_layers", c.num_layers);
        c.hidden_size = e.value("hidden_size", c.hidden_size);
        c.num_heads = e.value("num_heads", c.num_heads);
        c.ffn_size = e.value("ffn_size", c.ffn_size);
        c.dropout_rate = e.value("dropout_rate", c.dropout_rate);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    c.train.seed = c.seed;
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path, std::string* raw_bytes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    if (raw_bytes) *raw_bytes = ss.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Run results and persistence.
//
// A run directory holds: config.json (byte-identical snapshot of the input
// config), predictions.tsv (id, gold, pred), report.json (metrics only, so
// reruns are byte-identical), the model artifact, history.jsonl for encoder
// runs, and meta.json (wall time and artifact paths). A `latest` file in the
// output root points at the newest run directory.
// ---------------------------------------------------------------------------

struct RunResult {
    std::string run_dir;
    ExperimentConfig config;
    std::string model_name;
    Subtask subtask = Subtask::B;
    MetricsReport report;
    std::string dataset_fingerprint;
    double wall_time_s = 0.0;
    std::vector<EpochStats> history;
    std::string model_artifact;
};

namespace detail {

inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string dataset_fingerprint(const Dataset& ds) {
    std::string blob = subtask_name(ds.subtask);
    blob += '\n';
    for (const auto& tw : ds.examples) {
        blob += tw.id;
        blob += '\t';
        blob += tw.label;
        blob += '\n';
    }
    return fnv1a_hex(blob);
}

inline std::string timestamp_dir_name(std::uint64_t seed) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                        now.time_since_epoch()).count() % 1000000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d%02d%02d-%02d%02d%02d.%06lld-seed%llu",
                  tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                  static_cast<long long>(us), static_cast<unsigned long long>(seed));
    return buf;
}

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (Error& e) {
        e.set_stage(name);
        throw;
    }
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failure on " + path);
}

}  // namespace detail

inline nlohmann::json run_report_json(const RunResult& r) {
    nlohmann::json j;
    j["model"] = r.model_name;
    j["subtask"] = subtask_name(r.subtask);
    j["split"] = "test";
    j["dataset_fingerprint"] = r.dataset_fingerprint;
    j["metrics"] = metrics_to_json(r.report);
    return j;
}

// ---------------------------------------------------------------------------
// run_experiment: load -> train -> predict -> evaluate -> persist. Any stage
// error removes the partially written run directory and rethrows with the
// stage tag. Fully deterministic given the config seed.
// ---------------------------------------------------------------------------

inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& config_bytes = "") {
    namespace fs = std::filesystem;
    cfg.validate();
    const auto wall0 = std::chrono::steady_clock::now();

    Dataset train_ds, dev_ds, test_ds;
    detail::run_stage("load", [&] {
        train_ds = load_dataset(cfg.train_path, cfg.subtask);
        if (!cfg.dev_path.empty()) dev_ds = load_dataset(cfg.dev_path, cfg.subtask);
        test_ds = load_dataset(cfg.test_path, cfg.subtask);
        if (train_ds.empty()) throw InputError("training split is empty: " + cfg.train_path);
        if (test_ds.empty()) throw InputError("test split is empty: " + cfg.test_path);
        return 0;
    });

    RunResult result;
    result.config = cfg;
    result.subtask = cfg.subtask;
    result.model_name = (cfg.model_kind == "encoder" ? "encoder-SubTask-" : "naive-bayes-SubTask-") +
                        std::string(subtask_name(cfg.subtask));
    result.dataset_fingerprint = detail::dataset_fingerprint(test_ds);

    // train + predict
    std::vector<std::string> predictions;
    NBModel nb_model;
    EncoderModel enc_model;
    Vocab vocab;
    const bool is_encoder = cfg.model_kind == "encoder";
    if (is_encoder) {
        EncodeContext ctx;
        detail::run_stage("train", [&] {
            std::vector<std::string> corpus;
            corpus.reserve(train_ds.size());
            for (const auto& tw : train_ds.examples) {
                corpus.push_back(tw.norm_text);
                if (cfg.tokenizer.pair_topic && !tw.topic.empty())
                    corpus.push_back(normalize_tweet(tw.topic));
            }
            vocab = build_vocab(corpus, cfg.tokenizer.vocab_size, cfg.tokenizer.min_freq);
            ctx.vocab = vocab;
            ctx.max_len = cfg.tokenizer.max_len;
            ctx.pair_topic = cfg.tokenizer.pair_topic;

            EncoderConfig ecfg;
            ecfg.num_layers = cfg.num_layers;
            ecfg.hidden_size = cfg.hidden_size;
            ecfg.num_heads = cfg.num_heads;
            ecfg.ffn_size = cfg.ffn_size;
            ecfg.dropout_rate = cfg.dropout_rate;
            ecfg.vocab_size = vocab.size();
            ecfg.max_len = cfg.tokenizer.max_len;
            ecfg.num_classes = static_cast<int>(train_ds.scale.size());
            ecfg.seed = cfg.seed;

            TrainConfig tcfg = cfg.train;
            tcfg.seed = cfg.seed;
            auto tr = train_classifier(init_model(ecfg), train_ds, dev_ds, tcfg, ctx);
            enc_model = std::move(tr.model);
            result.history = std::move(tr.history);
            return 0;
        });
        detail::run_stage("predict", [&] {
            predictions = predict_labels(enc_model, ctx, test_ds);
            return 0;
        });
    } else {
        detail::run_stage("train", [&] {
            nb_model = train_nb(train_ds, cfg.alpha);
            return 0;
        });
        detail::run_stage("predict", [&] {
            predictions.reserve(test_ds.size());
            for (const auto& tw : test_ds.examples)
                predictions.push_back(predict_nb(nb_model, tw.norm_text).first);
            return 0;
        });
    }

    detail::run_stage("evaluate", [&] {
        std::vector<std::string> gold;
        gold.reserve(test_ds.size());
        for (const auto& tw : test_ds.examples) gold.push_back(tw.label);
        result.report = compute_metrics(confusion(gold, predictions, test_ds.scale));
        return 0;
    });

    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

    // persist; remove the partial directory on any failure
    const fs::path out_root = cfg.output_dir.empty() ? "runs" : cfg.output_dir;
    const fs::path run_dir = out_root / detail::timestamp_dir_name(cfg.seed);
    try {
        detail::run_stage("persist", [&] {
            fs::create_directories(run_dir);
            result.run_dir = run_dir.string();

            detail::write_text_file((run_dir / "config.json").string(),
                                    config_bytes.empty()
                                        ? experiment_config_to_json(cfg).dump(2) + "\n"
                                        : config_bytes);

            std::string tsv;
            for (std::size_t i = 0; i < test_ds.examples.size(); ++i) {
                tsv += test_ds.examples[i].id;
                tsv += '\t';
                tsv += test_ds.examples[i].label;
                tsv += '\t';
                tsv += predictions[i];
                tsv += '\n';
            }
            detail::write_text_file((run_dir / "predictions.tsv").string(), tsv);
            detail::write_text_file((run_dir / "report.json").string(),
                                    run_report_json(result).dump(2) + "\n");

            if (is_encoder) {
                result.model_artifact = (run_dir / "weights.bin").string();
                save_weights(enc_model, result.model_artifact);
                save_vocab(vocab, (run_dir / "vocab.txt").string());
                std::string hist;
                for (const auto& st : result.history) {
                    nlohmann::json hj = {{"epoch", st.epoch},
                                         {"loss", st.train_loss},
                                         {"train_accuracy", st.train_accuracy},
                                         {"dev_accuracy", st.dev_accuracy},
                                         {"wall_time_s", st.wall_time_s}};
                    hist += hj.dump();
                    hist += '\n';
                }
                detail::write_text_file((run_dir / "history.jsonl").string(), hist);
            } else {
                result.model_artifact = (run_dir / "nb_model.json").string();
                save_nb(nb_model, result.model_artifact);
            }

            nlohmann::json meta = {{"wall_time_s", result.wall_time_s},
                                   {"model_artifact", result.model_artifact},
                                   {"run_dir", result.run_dir}};
            detail::write_text_file((run_dir / "meta.json").string(), meta.dump(2) + "\n");
            detail::write_text_file((out_root / "latest").string(),
                                    run_dir.filename().string() + "\n");
            return 0;
        });

        // consistency: the persisted predictions must reproduce the report
        detail::run_stage("verify", [&] {
            std::ifstream in(run_dir / "predictions.tsv", std::ios::binary);
            std::vector<std::string> gold2, pred2;
            std::string line;
            while (std::getline(in, line)) {
                const auto t1 = line.find('\t');
                const auto t2 = line.find('\t', t1 + 1);
                if (t1 == std::string::npos || t2 == std::string::npos)
                    throw FormatError("bad persisted prediction line");
                gold2.push_back(line.substr(t1 + 1, t2 - t1 - 1));
                pred2.push_back(line.substr(t2 + 1));
            }
            const MetricsReport again = compute_metrics(confusion(gold2, pred2, test_ds.scale));
            if (metrics_to_json(again) != metrics_to_json(result.report))
                throw Error("persisted predictions do not reproduce the run report");
            return 0;
        });
    } catch (...) {
        std::error_code ec;
        fs::remove_all(run_dir, ec);
        throw;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reading runs back and comparing them
// ---------------------------------------------------------------------------

struct RunSummary {
    std::string model_name;
    std::string subtask;
    std::string dataset_fingerprint;
    MetricsReport report;
};

inline RunSummary load_run(const std::string& run_dir) {
    const std::string path = run_dir + "/report.json";
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("no report.json under " + run_dir);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid report JSON in " + path + ": " + e.what());
    }
    RunSummary s;
    s.model_name = j.at("model").get<std::string>();
    s.subtask = j.at("subtask").get<std::string>();
    s.dataset_fingerprint = j.value("dataset_fingerprint", "");
    s.report = metrics_from_json(j.at("metrics"));
    return s;
}

struct ComparisonRow {
    std::string name;
    double accuracy, precision, recall, f1;
};

struct Comparison {
    std::vector<ComparisonRow> rows;    // one per run
    std::vector<ComparisonRow> deltas;  // each later run minus the first
};

// All runs must come from the same subtask and test set; the first run is
// the baseline for the delta rows.
inline Comparison compare_runs(const std::vector<RunSummary>& runs) {
    if (runs.size() < 2) throw ComparisonError("comparison needs at least two runs");
    for (const auto& r : runs) {
        if (r.subtask != runs.front().subtask)
            throw ComparisonError("cannot compare runs across subtasks (" + r.subtask + " vs " +
                                  runs.front().subtask + ")");
        if (r.dataset_fingerprint != runs.front().dataset_fingerprint)
            throw ComparisonError("runs evaluate different test sets; refusing to compare");
    }
    Comparison cmp;
    for (const auto& r : runs)
        cmp.rows.push_back({r.model_name, r.report.accuracy, r.report.macro.precision,
                            r.report.macro.recall, r.report.macro.f1});
    for (std::size_t i = 1; i < runs.size(); ++i)
        cmp.deltas.push_back({"delta(" + runs[i].model_name + " - " + runs[0].model_name + ")",
                              cmp.rows[i].accuracy - cmp.rows[0].accuracy,
                              cmp.rows[i].precision - cmp.rows[0].precision,
                              cmp.rows[i].recall - cmp.rows[0].recall,
                              cmp.rows[i].f1 - cmp.rows[0].f1});
    return cmp;
}

inline std::string render_comparison(const Comparison& cmp) {
    std::vector<std::pair<std::string, MetricsReport>> rows;
    auto to_report = [](const ComparisonRow& r) {
        MetricsReport rep;
        rep.accuracy = r.accuracy;
        rep.macro = {r.precision, r.recall, r.f1};
        return rep;
    };
    for (const auto& r : cmp.rows) rows.emplace_back(r.name, to_report(r));
    for (const auto& r : cmp.deltas) rows.emplace_back(r.name, to_report(r));
    return render_report(rows);
}

// ---------------------------------------------------------------------------
// Binary vs. five-class study on matched fixtures. The five-point labels
// refine the binary partition over identical tweets, so for both model kinds
// the binary accuracy must come out at least as high.
// ---------------------------------------------------------------------------

struct StudyOptions {
    int total = 400;  // split 60/20/20
    std::vector<int> levels = {-2, -1, 1, 2};
    int epochs = 12;
    TokenizerSettings tokenizer{.vocab_size = 2000, .min_freq = 1, .max_len = 32,
                                .pair_topic = true};
};

struct StudyResult {
    double nb_binary = 0.0, nb_five = 0.0;
    double encoder_binary = 0.0, encoder_five = 0.0;
    bool nb_ordered = false, encoder_ordered = false;
    bool ok() const { return nb_ordered && encoder_ordered; }
};

namespace detail {

inline double accuracy_of(const std::vector<std::string>& gold,
                          const std::vector<std::string>& pred) {
    long correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) correct += (gold[i] == pred[i]);
    return gold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(gold.size());
}

struct SplitViews {
    Dataset train, dev, test;
};

// Index-range split; the generator interleaves levels, so contiguous ranges
// stay balanced.
inline SplitViews split_ranges(const Dataset& ds) {
    SplitViews sv;
    sv.train.subtask = sv.dev.subtask = sv.test.subtask = ds.subtask;
    sv.train.scale = sv.dev.scale = sv.test.scale = ds.scale;
    const std::size_t n = ds.size();
    const std::size_t n_train = n * 6 / 10, n_dev = n * 2 / 10;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            sv.train.examples.push_back(ds.examples[i]);
        else if (i < n_train + n_dev)
            sv.dev.examples.push_back(ds.examples[i]);
        else
            sv.test.examples.push_back(ds.examples[i]);
    }
    return sv;
}

inline double study_nb_accuracy(const SplitViews& sv) {
    NBModel model = train_nb(sv.train, 1.0);
    std::vector<std::string> gold, pred;
    for (const auto& tw : sv.test.examples) {
        gold.push_back(tw.label);
        pred.push_back(predict_nb(model, tw.norm_text).first);
    }
    return accuracy_of(gold, pred);
}

inline double study_encoder_accuracy(const SplitViews& sv, const StudyOptions& opt,
                                     std::uint64_t seed) {
    std::vector<std::string> corpus;
    for (const auto& tw : sv.train.examples) {
        corpus.push_back(tw.norm_text);
        if (!tw.topic.empty()) corpus.push_back(normalize_tweet(tw.topic));
    }
    EncodeContext ctx;
    ctx.vocab = build_vocab(corpus, opt.tokenizer.vocab_size, opt.tokenizer.min_freq);
    ctx.max_len = opt.tokenizer.max_len;
    ctx.pair_topic = opt.tokenizer.pair_topic;

    EncoderConfig ecfg;  // desk scale
    ecfg.vocab_size = ctx.vocab.size();
    ecfg.max_len = opt.tokenizer.max_len;
    ecfg.num_classes = static_cast<int>(sv.train.scale.size());
    ecfg.dropout_rate = 0.0;
    ecfg.seed = seed;
    TrainConfig tcfg;
    tcfg.epochs = opt.epochs;
    tcfg.learning_rate = 1e-3;
    tcfg.seed = seed;

    auto tr = train_classifier(init_model(ecfg), sv.train, sv.dev, tcfg, ctx);
    const auto pred = predict_labels(tr.model, ctx, sv.test);
    std::vector<std::string> gold;
    for (const auto& tw : sv.test.examples) gold.push_back(tw.label);
    return accuracy_of(gold, pred);
}

}  // namespace detail

inline StudyResult binary_vs_multiclass_study(std::uint64_t seed, const StudyOptions& opt = {}) {
    const MatchedPair pair = make_matched_pair(opt.total, seed, opt.levels);
    const auto bin = detail::split_ranges(pair.binary);
    const auto five = detail::split_ranges(pair.five_point);

    StudyResult res;
    res.nb_binary = detail::study_nb_accuracy(bin);
    res.nb_five = detail::study_nb_accuracy(five);
    res.encoder_binary = detail::study_encoder_accuracy(bin, opt, seed);
    res.encoder_five = detail::study_encoder_accuracy(five, opt, seed);
    res.nb_ordered = res.nb_binary >= res.nb_five;
    res.encoder_ordered = res.encoder_binary >= res.encoder_five;
    return res;
}

inline nlohmann::json study_to_json(const StudyResult& r) {
    return {{"naive_bayes", {{"binary_accuracy", r.nb_binary}, {"five_class_accuracy", r.nb_five},
                             {"binary_at_least_five_class", r.nb_ordered}}},
            {"encoder", {{"binary_accuracy", r.encoder_binary},
                         {"five_class_accuracy", r.encoder_five},
                         {"binary_at_least_five_class", r.encoder_ordered}}}};
}

}  // namespace sentibench
