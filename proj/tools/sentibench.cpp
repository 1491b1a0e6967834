// sentibench CLI: prepare / build-vocab / train / evaluate / report / study /
// selftest. Results go to stdout, diagnostics to stderr. Exit codes: 0 ok,
// 1 property failure, 2 usage or input error, 3 training failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sentibench/harness.hpp"
#include "sentibench/reference_targets.hpp"
#include "sentibench/selfcheck.hpp"

namespace sb = sentibench;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitInput = 2;
constexpr int kExitTraining = 3;

// Optional per-command JSON config: keys mirror the long flag names and fill
// in any flag not given on the command line.
class JsonDefaults {
public:
    explicit JsonDefaults(const std::string& path) {
        if (path.empty()) return;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw sb::IoError("cannot open config file: " + path);
        try {
            in >> j_;
        } catch (const json::exception& e) {
            throw sb::ConfigError("invalid JSON in " + path + ": " + e.what());
        }
    }

    template <typename T>
    void apply(const CLI::App& cmd, const std::string& flag, T& value) const {
        if (j_.is_null() || !j_.contains(flag)) return;
        if (cmd.count("--" + flag) > 0) return;  // explicit flags win
        value = j_.at(flag).get<T>();
    }

private:
    json j_;
};

int cmd_prepare(const std::string& in_path, const std::string& subtask_str,
                const std::string& out_path) {
    const sb::Subtask subtask = sb::subtask_from_string(subtask_str);
    const sb::Dataset ds = sb::load_dataset(in_path, subtask);
    if (!out_path.empty()) sb::save_dataset(ds, out_path, /*normalized=*/true);

    json summary;
    summary["subtask"] = sb::subtask_name(subtask);
    summary["total"] = ds.size();
    summary["skipped_not_available"] = ds.not_available_count;
    summary["distribution"] = sb::class_distribution(ds);
    std::cout << summary.dump(2) << '\n';
    return kExitOk;
}

int cmd_build_vocab(const std::string& in_path, const std::string& subtask_str,
                    const std::string& out_path, int max_size, int min_freq, bool with_topics) {
    const sb::Subtask subtask = sb::subtask_from_string(subtask_str);
    const sb::Dataset ds = sb::load_dataset(in_path, subtask);
    std::vector<std::string> corpus;
    corpus.reserve(ds.size());
    for (const auto& tw : ds.examples) {
        corpus.push_back(tw.norm_text);
        if (with_topics && !tw.topic.empty()) corpus.push_back(sb::normalize_tweet(tw.topic));
    }
    const sb::Vocab vocab = sb::build_vocab(corpus, max_size, min_freq);
    sb::save_vocab(vocab, out_path);
    std::cout << json{{"vocab_size", vocab.size()}, {"out", out_path}}.dump(2) << '\n';
    return kExitOk;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, bool seed_given) {
    std::string raw;
    sb::ExperimentConfig cfg = sb::load_experiment_config(config_path, &raw);
    if (seed_given) {
        cfg.seed = seed;
        cfg.train.seed = seed;
        raw.clear();  // the snapshot must reflect the effective config
    }
    const sb::RunResult result = sb::run_experiment(cfg, raw);
    std::cerr << "test accuracy " << sb::format_metric(result.report.accuracy) << " over "
              << result.report.n << " examples (" << result.model_name << ")\n";
    std::cout << result.run_dir << '\n';
    return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& subtask_str, const std::string& vocab_path, int max_len,
                 bool pair_topic, bool as_json) {
    const sb::Subtask subtask = sb::subtask_from_string(subtask_str);
    const sb::Dataset ds = sb::load_dataset(data_path, subtask);
    if (ds.empty()) throw sb::InputError("evaluation split is empty: " + data_path);

    std::vector<std::string> gold, pred;
    gold.reserve(ds.size());
    for (const auto& tw : ds.examples) gold.push_back(tw.label);

    std::string model_name;
    std::ifstream probe(model_path, std::ios::binary);
    if (!probe) throw sb::IoError("cannot open model file: " + model_path);
    char magic[8] = {};
    probe.read(magic, sizeof(magic));
    probe.close();
    if (std::char_traits<char>::compare(magic, sb::kWeightsMagic, 8) == 0) {
        if (vocab_path.empty())
            throw sb::ConfigError("encoder models need --vocab for evaluation");
        sb::EncodeContext ctx;
        ctx.vocab = sb::load_vocab(vocab_path);
        ctx.max_len = max_len;
        ctx.pair_topic = pair_topic;
        const sb::EncoderModel model = sb::load_weights(model_path);
        pred = sb::predict_labels(model, ctx, ds);
        model_name = "encoder";
    } else {
        const sb::NBModel model = sb::load_nb(model_path);
        if (!(model.scale == ds.scale))
            throw sb::ConfigError("model scale does not match subtask " + subtask_str);
        pred.reserve(ds.size());
        for (const auto& tw : ds.examples) pred.push_back(sb::predict_nb(model, tw.norm_text).first);
        model_name = "naive_bayes";
    }

    const sb::MetricsReport rep = sb::compute_metrics(sb::confusion(gold, pred, ds.scale));
    if (as_json) {
        json j = {{"model", model_name},
                  {"subtask", sb::subtask_name(subtask)},
                  {"split", data_path},
                  {"metrics", sb::metrics_to_json(rep)}};
        std::cout << j.dump(2) << '\n';
    } else {
        std::cout << sb::render_report({{model_name + "-SubTask-" + subtask_str, rep}});
    }
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& reference,
               bool as_json) {
    if (!reference.empty()) {
        if (reference != "table2")
            throw sb::ConfigError("unknown reference '" + reference + "' (try table2)");
        std::vector<std::pair<std::string, sb::MetricsReport>> rows;
        for (const auto& r : sb::reference_results())
            rows.emplace_back(r.model, sb::reference_row_report(r));
        // delta rows pair each model row with its baseline by subtask
        for (const auto& r : sb::reference_results()) {
            if (std::string(r.model).find("Baseline") == 0) continue;
            for (const auto& b : sb::reference_results()) {
                if (std::string(b.model).find("Baseline") != 0 ||
                    std::string(b.subtask) != r.subtask)
                    continue;
                sb::MetricsReport d;
                d.accuracy = r.accuracy - b.accuracy;
                d.macro = {r.precision - b.precision, r.recall - b.recall, r.f1 - b.f1};
                rows.emplace_back("delta(" + std::string(r.model) + " - " + b.model + ")", d);
            }
        }
        if (as_json)
            std::cout << sb::report_rows_json(rows).dump(2) << '\n';
        else
            std::cout << sb::render_report(rows);
        return kExitOk;
    }

    if (run_dirs.empty())
        throw sb::ConfigError("report needs at least one --runs directory or --reference table2");

    std::vector<sb::RunSummary> runs;
    for (const auto& dir : run_dirs) runs.push_back(sb::load_run(dir));
    if (runs.size() == 1) {
        std::vector<std::pair<std::string, sb::MetricsReport>> rows = {
            {runs[0].model_name, runs[0].report}};
        if (as_json)
            std::cout << sb::report_rows_json(rows).dump(2) << '\n';
        else
            std::cout << sb::render_report(rows);
        return kExitOk;
    }
    const sb::Comparison cmp = sb::compare_runs(runs);
    if (as_json) {
        std::vector<std::pair<std::string, sb::MetricsReport>> rows;
        for (const auto& r : cmp.rows) {
            sb::MetricsReport rep;
            rep.accuracy = r.accuracy;
            rep.macro = {r.precision, r.recall, r.f1};
            rows.emplace_back(r.name, rep);
        }
        for (const auto& r : cmp.deltas) {
            sb::MetricsReport rep;
            rep.accuracy = r.accuracy;
            rep.macro = {r.precision, r.recall, r.f1};
            rows.emplace_back(r.name, rep);
        }
        std::cout << sb::report_rows_json(rows).dump(2) << '\n';
    } else {
        std::cout << sb::render_comparison(cmp);
    }
    return kExitOk;
}

int cmd_study(std::uint64_t seed, int total, int epochs, bool collapse) {
    sb::StudyOptions opt;
    opt.total = total;
    opt.epochs = epochs;
    if (collapse) opt.levels = {1};  // degenerate single-class fixture
    const sb::StudyResult res = sb::binary_vs_multiclass_study(seed, opt);
    std::cout << sb::study_to_json(res).dump(2) << '\n';
    if (!res.ok()) {
        std::cerr << "study assertion failed: binary accuracy fell below the 5-class accuracy\n";
        return kExitPropertyFailure;
    }
    return kExitOk;
}

int cmd_selftest(bool quick, std::uint64_t seed, const std::string& mutate_tensor) {
    const auto results = sb::run_selftest(quick, seed, mutate_tensor);
    bool all_pass = true;
    std::vector<std::string> failed;
    for (const auto& r : results) {
        std::printf("[%s] %-32s %s [%.2fs]\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str(), r.seconds);
        if (!r.pass) {
            all_pass = false;
            failed.push_back(r.name);
        }
    }
    if (!all_pass) {
        std::string names;
        for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
        std::cerr << "failed properties: " << names << '\n';
        return kExitPropertyFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale tweet sentiment benchmark (3/2/5-point scales)"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "parse, normalize and summarize a dataset");
    std::string p_in, p_subtask = "A", p_out, p_config;
    std::uint64_t p_seed = 0;
    prepare->add_option("--in", p_in, "input TSV");
    prepare->add_option("--subtask", p_subtask, "A, B or C");
    prepare->add_option("--out", p_out, "normalized TSV output path");
    prepare->add_option("--seed", p_seed, "unused; accepted for interface uniformity");
    prepare->add_option("--config", p_config, "JSON file with defaults for these flags");

    // build-vocab
    auto* bvocab = app.add_subcommand("build-vocab", "train a subword vocabulary from a dataset");
    std::string v_in, v_subtask = "A", v_out = "vocab.txt", v_config;
    int v_max_size = 8000, v_min_freq = 1;
    bool v_topics = true;
    std::uint64_t v_seed = 0;
    bvocab->add_option("--in", v_in, "input TSV");
    bvocab->add_option("--subtask", v_subtask, "A, B or C");
    bvocab->add_option("--out", v_out, "vocab file (one token per line)");
    bvocab->add_option("--max-size", v_max_size, "vocabulary capacity");
    bvocab->add_option("--min-freq", v_min_freq, "minimum pair frequency for merges");
    bvocab->add_flag("--topics,!--no-topics", v_topics, "include topic text in the corpus");
    bvocab->add_option("--seed", v_seed, "unused; accepted for interface uniformity");
    bvocab->add_option("--config", v_config, "JSON file with defaults for these flags");

    // train
    auto* train = app.add_subcommand("train", "run an experiment from a config file");
    std::string t_config;
    std::uint64_t t_seed = 0;
    train->add_option("--config", t_config, "experiment config JSON")->required();
    train->add_option("--seed", t_seed, "override the config seed");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "evaluate a saved model on a dataset");
    std::string e_model, e_data, e_subtask = "A", e_vocab, e_config;
    int e_max_len = 64;
    bool e_pair_topic = true, e_json = false;
    std::uint64_t e_seed = 0;
    eval->add_option("--model", e_model, "nb_model.json or weights.bin");
    eval->add_option("--data", e_data, "dataset TSV");
    eval->add_option("--subtask", e_subtask, "A, B or C");
    eval->add_option("--vocab", e_vocab, "vocab file (encoder models)");
    eval->add_option("--max-len", e_max_len, "encoder sequence length");
    eval->add_flag("--pair-topic,!--no-pair-topic", e_pair_topic, "pack topic as segment 1");
    eval->add_flag("--json", e_json, "emit JSON instead of a table");
    eval->add_option("--seed", e_seed, "unused; accepted for interface uniformity");
    eval->add_option("--config", e_config, "JSON file with defaults for these flags");

    // report
    auto* report = app.add_subcommand("report", "render a comparison table from run directories");
    std::vector<std::string> r_runs;
    std::string r_reference, r_config;
    bool r_json = false;
    std::uint64_t r_seed = 0;
    report->add_option("--runs", r_runs, "run directories (first is the baseline)");
    report->add_option("--reference", r_reference, "replay a stored reference table (table2)");
    report->add_flag("--json", r_json, "emit JSON instead of a table");
    report->add_option("--seed", r_seed, "unused; accepted for interface uniformity");
    report->add_option("--config", r_config, "JSON file with defaults for these flags");

    // study
    auto* study = app.add_subcommand("study", "binary vs five-class comparison on matched fixtures");
    std::uint64_t s_seed = 0;
    int s_total = 400, s_epochs = 12;
    bool s_collapse = false;
    std::string s_config;
    study->add_option("--seed", s_seed, "fixture and training seed");
    study->add_option("--total", s_total, "fixture size (split 60/20/20)");
    study->add_option("--epochs", s_epochs, "encoder fine-tuning epochs");
    study->add_flag("--collapse", s_collapse, "degenerate fixture with a single level");
    study->add_option("--config", s_config, "JSON file with defaults for these flags");

    // selftest
    auto* selftest = app.add_subcommand("selftest", "run the property suite");
    bool st_quick = false;
    std::uint64_t st_seed = 0;
    std::string st_mutate, st_config;
    selftest->add_flag("--quick", st_quick, "skip training-based checks");
    selftest->add_option("--seed", st_seed, "property-suite seed");
    selftest->add_option("--mutate-gradient", st_mutate,
                         "test hook: scale one tensor's analytic gradient by 2")
        ->group("");  // hidden
    selftest->add_option("--config", st_config, "JSON file with defaults for these flags");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInput;
    }

    try {
        if (prepare->parsed()) {
            JsonDefaults d(p_config);
            d.apply(*prepare, "in", p_in);
            d.apply(*prepare, "subtask", p_subtask);
            d.apply(*prepare, "out", p_out);
            if (p_in.empty()) throw sb::ConfigError("prepare needs --in");
            return cmd_prepare(p_in, p_subtask, p_out);
        }
        if (bvocab->parsed()) {
            JsonDefaults d(v_config);
            d.apply(*bvocab, "in", v_in);
            d.apply(*bvocab, "subtask", v_subtask);
            d.apply(*bvocab, "out", v_out);
            d.apply(*bvocab, "max-size", v_max_size);
            d.apply(*bvocab, "min-freq", v_min_freq);
            if (v_in.empty()) throw sb::ConfigError("build-vocab needs --in");
            return cmd_build_vocab(v_in, v_subtask, v_out, v_max_size, v_min_freq, v_topics);
        }
        if (train->parsed()) return cmd_train(t_config, t_seed, train->count("--seed") > 0);
        if (eval->parsed()) {
            JsonDefaults d(e_config);
            d.apply(*eval, "model", e_model);
            d.apply(*eval, "data", e_data);
            d.apply(*eval, "subtask", e_subtask);
            d.apply(*eval, "vocab", e_vocab);
            d.apply(*eval, "max-len", e_max_len);
            d.apply(*eval, "pair-topic", e_pair_topic);
            if (e_model.empty() || e_data.empty())
                throw sb::ConfigError("evaluate needs --model and --data");
            return cmd_evaluate(e_model, e_data, e_subtask, e_vocab, e_max_len, e_pair_topic,
                                e_json);
        }
        if (report->parsed()) {
            JsonDefaults d(r_config);
            d.apply(*report, "runs", r_runs);
            d.apply(*report, "reference", r_reference);
            return cmd_report(r_runs, r_reference, r_json);
        }
        if (study->parsed()) {
            JsonDefaults d(s_config);
            d.apply(*study, "seed", s_seed);
            d.apply(*study, "total", s_total);
            d.apply(*study, "epochs", s_epochs);
            d.apply(*study, "collapse", s_collapse);
            return cmd_study(s_seed, s_total, s_epochs, s_collapse);
        }
        if (selftest->parsed()) {
            JsonDefaults d(st_config);
            d.apply(*selftest, "quick", st_quick);
            d.apply(*selftest, "seed", st_seed);
            return cmd_selftest(st_quick, st_seed, st_mutate);
        }
    } catch (const sb::TrainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitTraining;
    } catch (const sb::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}
