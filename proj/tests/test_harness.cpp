#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "sentibench/harness.hpp"
#include "sentibench/reference_targets.hpp"

using namespace sentibench;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("sb_harness_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig nb_fixture_config(const TempDir& tmp, std::uint64_t seed) {
    FixtureOptions fopt;
    fopt.subtask = Subtask::B;
    fopt.count = 200;
    fopt.seed = seed;
    const FixtureFiles files = write_fixture_splits(tmp.path.string(), fopt);
    ExperimentConfig cfg;
    cfg.subtask = Subtask::B;
    cfg.model_kind = "naive_bayes";
    cfg.train_path = files.train;
    cfg.dev_path = files.dev;
    cfg.test_path = files.test;
    cfg.seed = seed;
    cfg.output_dir = (tmp.path / "runs").string();
    return cfg;
}

ExperimentConfig encoder_fixture_config(const TempDir& tmp, std::uint64_t seed) {
    ExperimentConfig cfg = nb_fixture_config(tmp, seed);
    cfg.model_kind = "encoder";
    cfg.tokenizer.vocab_size = 1500;
    cfg.tokenizer.max_len = 32;
    cfg.dropout_rate = 0.0;
    cfg.train.epochs = 12;
    cfg.train.learning_rate = 1e-3;
    cfg.train.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("experiment config JSON round-trip") {
    TempDir tmp("cfg");
    ExperimentConfig cfg = encoder_fixture_config(tmp, 5);
    const auto j = experiment_config_to_json(cfg);
    const ExperimentConfig back = experiment_config_from_json(j);
    CHECK(experiment_config_to_json(back) == j);
    CHECK(back.seed == cfg.seed);
    CHECK(back.model_kind == cfg.model_kind);
    CHECK(back.tokenizer.max_len == cfg.tokenizer.max_len);
    CHECK(back.train.epochs == cfg.train.epochs);
}

TEST_CASE("experiment config requires a seed") {
    nlohmann::json j = {{"subtask", "B"},
                        {"model_kind", "naive_bayes"},
                        {"data", {{"train", "x"}, {"test", "y"}}}};
    CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
}

TEST_CASE("naive bayes fixture run") {
    TempDir tmp("nbrun");
    const ExperimentConfig cfg = nb_fixture_config(tmp, 101);
    const RunResult res = run_experiment(cfg);

    SECTION("separable fixture scores at least 0.9") {
        CHECK(res.report.accuracy >= 0.9);
    }
    SECTION("artifacts exist") {
        CHECK(fs::exists(fs::path(res.run_dir) / "config.json"));
        CHECK(fs::exists(fs::path(res.run_dir) / "predictions.tsv"));
        CHECK(fs::exists(fs::path(res.run_dir) / "report.json"));
        CHECK(fs::exists(res.model_artifact));
        CHECK(fs::exists(fs::path(cfg.output_dir) / "latest"));
        const std::string latest = slurp(fs::path(cfg.output_dir) / "latest");
        CHECK(res.run_dir.find(latest.substr(0, latest.size() - 1)) != std::string::npos);
    }
    SECTION("report names the split and fingerprints the test set") {
        nlohmann::json rj = nlohmann::json::parse(slurp(fs::path(res.run_dir) / "report.json"));
        CHECK(rj.at("split") == "test");
        CHECK(rj.at("dataset_fingerprint").get<std::string>().size() == 16);
    }
}

TEST_CASE("reruns are byte-identical; output dir does not matter") {
    TempDir tmp("det");
    ExperimentConfig cfg = nb_fixture_config(tmp, 303);
    const RunResult r1 = run_experiment(cfg);
    cfg.output_dir = (tmp.path / "elsewhere").string();
    const RunResult r2 = run_experiment(cfg);

    CHECK(slurp(fs::path(r1.run_dir) / "predictions.tsv") ==
          slurp(fs::path(r2.run_dir) / "predictions.tsv"));
    CHECK(slurp(fs::path(r1.run_dir) / "report.json") ==
          slurp(fs::path(r2.run_dir) / "report.json"));
    CHECK(metrics_to_json(r1.report) == metrics_to_json(r2.report));
}

TEST_CASE("encoder fixture run reaches 0.9 and persists its history") {
    TempDir tmp("encrun");
    const ExperimentConfig cfg = encoder_fixture_config(tmp, 7);
    const RunResult res = run_experiment(cfg);
    CHECK(res.report.accuracy >= 0.9);
    CHECK(fs::exists(fs::path(res.run_dir) / "history.jsonl"));
    CHECK(fs::exists(fs::path(res.run_dir) / "vocab.txt"));
    CHECK(fs::exists(fs::path(res.run_dir) / "weights.bin"));
    CHECK_FALSE(res.history.empty());
}

TEST_CASE("failed stages remove the partial run directory") {
    TempDir tmp("fail");
    ExperimentConfig cfg = nb_fixture_config(tmp, 11);
    cfg.test_path = (tmp.path / "missing.tsv").string();
    const fs::path runs = cfg.output_dir;
    try {
        run_experiment(cfg);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("[load]") != std::string::npos);
    }
    // no run directories were left behind
    if (fs::exists(runs)) {
        for (const auto& entry : fs::directory_iterator(runs))
            CHECK(entry.path().filename() == "latest");
    }
}

TEST_CASE("compare_runs") {
    TempDir tmp("cmp");
    const ExperimentConfig nb_cfg = nb_fixture_config(tmp, 77);
    const RunResult nb_run = run_experiment(nb_cfg);
    ExperimentConfig enc_cfg = encoder_fixture_config(tmp, 77);
    enc_cfg.output_dir = nb_cfg.output_dir;
    const RunResult enc_run = run_experiment(enc_cfg);

    SECTION("deltas equal direct subtraction of the persisted reports") {
        const RunSummary s1 = load_run(nb_run.run_dir);
        const RunSummary s2 = load_run(enc_run.run_dir);
        const Comparison cmp = compare_runs({s1, s2});
        REQUIRE(cmp.rows.size() == 2);
        REQUIRE(cmp.deltas.size() == 1);
        CHECK(cmp.deltas[0].accuracy ==
              Catch::Approx(s2.report.accuracy - s1.report.accuracy).margin(1e-15));
        CHECK(cmp.deltas[0].f1 ==
              Catch::Approx(s2.report.macro.f1 - s1.report.macro.f1).margin(1e-15));
        const std::string table = render_comparison(cmp);
        CHECK(table.find("naive-bayes-SubTask-B") != std::string::npos);
        CHECK(table.find("encoder-SubTask-B") != std::string::npos);
        CHECK(table.find("delta(") != std::string::npos);
    }
    SECTION("a run compared with itself is all zeros") {
        const RunSummary s = load_run(nb_run.run_dir);
        const Comparison cmp = compare_runs({s, s});
        CHECK(cmp.deltas[0].accuracy == 0.0);
        CHECK(cmp.deltas[0].precision == 0.0);
        CHECK(cmp.deltas[0].recall == 0.0);
        CHECK(cmp.deltas[0].f1 == 0.0);
    }
    SECTION("different test sets refuse to compare") {
        TempDir tmp2("cmp2");
        const ExperimentConfig other = nb_fixture_config(tmp2, 78);  // different fixture seed
        const RunResult other_run = run_experiment(other);
        CHECK_THROWS_AS(compare_runs({load_run(nb_run.run_dir), load_run(other_run.run_dir)}),
                        ComparisonError);
    }
    SECTION("fewer than two runs refuse to compare") {
        CHECK_THROWS_AS(compare_runs({load_run(nb_run.run_dir)}), ComparisonError);
    }
}

TEST_CASE("table 2 reference deltas") {
    // replayed reference rows: delta(accuracy, A) = 0.6337 - 0.3686 = 0.2651
    const auto& rows = reference_results();
    double bert_a = 0, base_a = 0;
    for (const auto& r : rows) {
        if (std::string(r.model) == "BERT-SubTask-A") bert_a = r.accuracy;
        if (std::string(r.model) == "Baseline A") base_a = r.accuracy;
    }
    CHECK(bert_a - base_a == Catch::Approx(0.2651).margin(1e-12));
}

TEST_CASE("binary vs five-class study") {
    StudyOptions opt;
    opt.total = 240;
    opt.epochs = 8;
    const StudyResult res = binary_vs_multiclass_study(12, opt);
    INFO("nb " << res.nb_binary << " vs " << res.nb_five << ", encoder " << res.encoder_binary
               << " vs " << res.encoder_five);
    CHECK(res.nb_ordered);
    CHECK(res.encoder_ordered);
    CHECK(res.nb_binary >= res.nb_five);
    CHECK(res.encoder_binary >= res.encoder_five);
}

TEST_CASE("degenerate single-level study collapses to equal perfect accuracy") {
    StudyOptions opt;
    opt.total = 120;
    opt.epochs = 4;
    opt.levels = {1};
    const StudyResult res = binary_vs_multiclass_study(13, opt);
    CHECK(res.nb_binary == 1.0);
    CHECK(res.nb_five == 1.0);
    CHECK(res.encoder_binary == 1.0);
    CHECK(res.encoder_five == 1.0);
    CHECK(res.ok());
}
