// Drives the built binary end to end: flag parsing, exit-code contract,
// artifact layout, determinism of rerun outputs.

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include <json.hpp>

#include "sentibench/fixtures.hpp"

using namespace sentibench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string out;
};

CmdResult run_cmd(const std::string& args) {
    const std::string cmd = std::string(SENTIBENCH_CLI_PATH) + " " + args + " 2>/dev/null";
    std::array<char, 4096> buf{};
    CmdResult res;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) res.out.append(buf.data(), n);
    const int status = pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string chomp(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

struct CliFixture {
    fs::path dir;
    FixtureFiles files;

    CliFixture() {
        dir = fs::temp_directory_path() / ("sb_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        FixtureOptions opt;
        opt.subtask = Subtask::B;
        opt.count = 200;
        opt.seed = 42;
        files = write_fixture_splits(dir.string(), opt);
    }
    ~CliFixture() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }

    std::string write_nb_config(const std::string& name, std::uint64_t seed) const {
        json cfg = {{"subtask", "B"},
                    {"model_kind", "naive_bayes"},
                    {"data",
                     {{"train", files.train}, {"dev", files.dev}, {"test", files.test}}},
                    {"naive_bayes", {{"alpha", 1.0}}},
                    {"seed", seed},
                    {"output_dir", (dir / "runs").string()}};
        const std::string path = (dir / name).string();
        std::ofstream out(path);
        out << cfg.dump(2);
        return path;
    }
};

}  // namespace

TEST_CASE("cli prepare") {
    CliFixture fx;
    SECTION("valid file summarizes all classes and exits 0") {
        const auto res = run_cmd("prepare --in " + fx.files.train + " --subtask B --out " +
                                 (fx.dir / "norm.tsv").string());
        CHECK(res.exit_code == 0);
        const json summary = json::parse(res.out);
        CHECK(summary.at("total").get<long>() == 120);
        CHECK(summary.at("distribution").size() == 2);
        CHECK(fs::exists(fx.dir / "norm.tsv"));
    }
    SECTION("neutral row under subtask B exits 2") {
        const std::string bad = (fx.dir / "bad.tsv").string();
        std::ofstream(bad) << "1\tacme\tneutral\thmm\n";
        CHECK(run_cmd("prepare --in " + bad + " --subtask B").exit_code == 2);
    }
    SECTION("missing input exits 2") {
        CHECK(run_cmd("prepare --in " + (fx.dir / "nope.tsv").string() + " --subtask A").exit_code ==
              2);
    }
    SECTION("unknown flags are rejected") {
        CHECK(run_cmd("prepare --frobnicate yes").exit_code == 2);
    }
}

TEST_CASE("cli build-vocab") {
    CliFixture fx;
    const std::string vocab_path = (fx.dir / "vocab.txt").string();
    const auto res = run_cmd("build-vocab --in " + fx.files.train + " --subtask B --out " +
                             vocab_path + " --max-size 800");
    CHECK(res.exit_code == 0);
    CHECK(json::parse(res.out).at("vocab_size").get<int>() <= 800);
    CHECK(fs::exists(vocab_path));
}

TEST_CASE("cli train and report") {
    CliFixture fx;
    const std::string cfg = fx.write_nb_config("nb.json", 7);

    const auto first = run_cmd("train --config " + cfg);
    REQUIRE(first.exit_code == 0);
    const std::string run_dir = chomp(first.out);
    REQUIRE(fs::exists(fs::path(run_dir) / "report.json"));

    SECTION("rerunning the same config reproduces the outputs byte for byte") {
        const auto second = run_cmd("train --config " + cfg);
        REQUIRE(second.exit_code == 0);
        const std::string run_dir2 = chomp(second.out);
        CHECK(slurp(fs::path(run_dir) / "predictions.tsv") ==
              slurp(fs::path(run_dir2) / "predictions.tsv"));
        CHECK(slurp(fs::path(run_dir) / "report.json") ==
              slurp(fs::path(run_dir2) / "report.json"));
    }
    SECTION("report renders one run, two runs, and rejects zero runs") {
        CHECK(run_cmd("report").exit_code == 2);
        const auto one = run_cmd("report --runs " + run_dir);
        CHECK(one.exit_code == 0);
        CHECK(one.out.find("naive-bayes-SubTask-B") != std::string::npos);
        const auto two = run_cmd("report --runs " + run_dir + " " + run_dir);
        CHECK(two.exit_code == 0);
        CHECK(two.out.find("delta(") != std::string::npos);
        CHECK(two.out.find("0.0000") != std::string::npos);  // self-delta is zero
    }
    SECTION("report on a directory without a report exits 2") {
        CHECK(run_cmd("report --runs " + (fx.dir / "not_a_run").string()).exit_code == 2);
    }
    SECTION("evaluate replays the persisted model") {
        const auto res = run_cmd("evaluate --model " + run_dir + "/nb_model.json --data " +
                                 fx.files.test + " --subtask B --json");
        CHECK(res.exit_code == 0);
        const json j = json::parse(res.out);
        CHECK(j.at("metrics").at("accuracy").get<double>() >= 0.9);
    }
    SECTION("missing data path exits 2") {
        json bad_cfg = json::parse(slurp(cfg));
        bad_cfg["data"]["train"] = (fx.dir / "gone.tsv").string();
        const std::string bad_path = (fx.dir / "bad.json").string();
        std::ofstream(bad_path) << bad_cfg.dump(2);
        CHECK(run_cmd("train --config " + bad_path).exit_code == 2);
    }
}

TEST_CASE("cli train honors a seed override") {
    CliFixture fx;
    const std::string cfg = fx.write_nb_config("nb_seed.json", 7);
    const auto res = run_cmd("train --config " + cfg + " --seed 99");
    REQUIRE(res.exit_code == 0);
    const std::string run_dir = chomp(res.out);
    CHECK(run_dir.find("seed99") != std::string::npos);
    const json snapshot = json::parse(slurp(fs::path(run_dir) / "config.json"));
    CHECK(snapshot.at("seed").get<std::uint64_t>() == 99);
}

TEST_CASE("cli report --reference table2") {
    const auto res = run_cmd("report --reference table2");
    CHECK(res.exit_code == 0);
    for (const char* needle : {"BERT-SubTask-A", "0.6337", "Baseline C", "0.3836", "0.2651"})
        CHECK(res.out.find(needle) != std::string::npos);
    CHECK(run_cmd("report --reference nonsense").exit_code == 2);
}

TEST_CASE("cli selftest") {
    SECTION("quick run passes") {
        const auto res = run_cmd("selftest --quick");
        CHECK(res.exit_code == 0);
        CHECK(res.out.find("[PASS] metrics_oracle") != std::string::npos);
        CHECK(res.out.find("[FAIL]") == std::string::npos);
    }
    SECTION("mutated gradient fails and names the check") {
        const auto res = run_cmd("selftest --quick --mutate-gradient layer0.wq");
        CHECK(res.exit_code == 1);
        CHECK(res.out.find("[FAIL] grad_check") != std::string::npos);
    }
    SECTION("unknown tensor name is an input error") {
        CHECK(run_cmd("selftest --quick --mutate-gradient bogus").exit_code == 2);
    }
}

TEST_CASE("cli train exits 3 on divergence") {
    CliFixture fx;
    json cfg = {{"subtask", "B"},
                {"model_kind", "encoder"},
                {"data", {{"train", fx.files.train}, {"dev", fx.files.dev}, {"test", fx.files.test}}},
                {"tokenizer", {{"vocab_size", 1200}, {"max_len", 24}}},
                {"encoder", {{"dropout_rate", 0.0}}},
                {"train",
                 {{"learning_rate", 1e200},
                  {"epochs", 2},
                  {"max_grad_norm", 1e30},
                  {"warmup_fraction", 0.0}}},
                {"seed", 3},
                {"output_dir", (fx.dir / "runs").string()}};
    const std::string path = (fx.dir / "diverge.json").string();
    std::ofstream(path) << cfg.dump(2);
    CHECK(run_cmd("train --config " + path).exit_code == 3);
}

TEST_CASE("cli study on the degenerate collapsed fixture") {
    const auto res = run_cmd("study --seed 4 --total 80 --epochs 2 --collapse");
    CHECK(res.exit_code == 0);
    const json j = json::parse(res.out);
    CHECK(j.at("naive_bayes").at("binary_accuracy").get<double>() == 1.0);
    CHECK(j.at("encoder").at("five_class_accuracy").get<double>() == 1.0);
}

TEST_CASE("cli config files supply defaults") {
    CliFixture fx;
    const std::string conf = (fx.dir / "prep.json").string();
    std::ofstream(conf) << json{{"in", fx.files.train}, {"subtask", "B"}}.dump();
    const auto res = run_cmd("prepare --config " + conf);
    CHECK(res.exit_code == 0);
    CHECK(json::parse(res.out).at("subtask") == "B");
    // explicit flags beat config values: forcing subtask A on a topic-column
    // file must fail to parse
    const auto res2 = run_cmd("prepare --config " + conf + " --subtask A");
    CHECK(res2.exit_code == 2);
}
