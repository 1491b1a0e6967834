#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>

#include "sentibench/metrics.hpp"
#include "sentibench/reference_targets.hpp"

using namespace sentibench;

namespace {

// Independent tally: counts pairs with a map, no matrix indexing shared with
// the implementation.
std::map<std::pair<std::string, std::string>, long> tally(const std::vector<std::string>& gold,
                                                          const std::vector<std::string>& pred) {
    std::map<std::pair<std::string, std::string>, long> t;
    for (std::size_t i = 0; i < gold.size(); ++i) ++t[{gold[i], pred[i]}];
    return t;
}

struct FormulaOracle {
    double accuracy = 0.0;
    std::map<std::string, ClassMetrics> per_class;
    ClassMetrics macro;
};

FormulaOracle formula_oracle(const std::vector<std::string>& gold,
                             const std::vector<std::string>& pred,
                             const std::vector<std::string>& labels) {
    FormulaOracle o;
    long correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) correct += gold[i] == pred[i];
    o.accuracy = gold.empty() ? 0.0 : double(correct) / double(gold.size());
    for (const auto& c : labels) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            tp += (gold[i] == c && pred[i] == c);
            fp += (gold[i] != c && pred[i] == c);
            fn += (gold[i] == c && pred[i] != c);
        }
        ClassMetrics cm;
        cm.precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
        cm.recall = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
        cm.f1 = cm.precision + cm.recall == 0.0
                    ? 0.0
                    : 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
        o.per_class[c] = cm;
        o.macro.precision += cm.precision / double(labels.size());
        o.macro.recall += cm.recall / double(labels.size());
        o.macro.f1 += cm.f1 / double(labels.size());
    }
    return o;
}

std::vector<std::string> random_labels(Rng& rng, const SentimentScale& scale, int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i)
        out.push_back(scale.labels[static_cast<std::size_t>(rng.below(scale.size()))]);
    return out;
}

}  // namespace

TEST_CASE("confusion") {
    const auto scale = SentimentScale::two_point();
    SECTION("identity diagonal") {
        const auto m = confusion({"positive", "negative"}, {"positive", "negative"}, scale);
        CHECK(m.counts[0][0] == 1);
        CHECK(m.counts[1][1] == 1);
        CHECK(m.counts[0][1] == 0);
        CHECK(m.counts[1][0] == 0);
    }
    SECTION("empty lists give an all-zero matrix") {
        const auto m = confusion({}, {}, scale);
        CHECK(m.total() == 0);
    }
    SECTION("matches the brute-force tally on 1000 random pairs") {
        Rng rng(17);
        const auto s3 = SentimentScale::three_point();
        const auto gold = random_labels(rng, s3, 1000);
        const auto pred = random_labels(rng, s3, 1000);
        const auto m = confusion(gold, pred, s3);
        const auto t = tally(gold, pred);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                const auto it = t.find({s3.labels[i], s3.labels[j]});
                CHECK(m.counts[i][j] == (it == t.end() ? 0 : it->second));
            }
    }
    SECTION("length mismatch") {
        CHECK_THROWS_AS(confusion({"positive"}, {}, scale), InputError);
    }
    SECTION("out-of-scale label") {
        CHECK_THROWS_AS(confusion({"meh"}, {"positive"}, scale), InputError);
    }
}

TEST_CASE("compute_metrics worked example") {
    // TP=45 FP=15 FN=5 TN=35 for the 'positive' class
    ConfusionMatrix m;
    m.labels = {"positive", "negative"};
    m.counts = {{45, 5}, {15, 35}};
    const auto rep = compute_metrics(m);
    CHECK(rep.accuracy == Catch::Approx(0.8).margin(1e-15));
    CHECK(rep.per_class.at("positive").precision == Catch::Approx(0.75).margin(1e-15));
    CHECK(rep.per_class.at("positive").recall == Catch::Approx(0.9).margin(1e-15));
    CHECK(rep.per_class.at("positive").f1 == Catch::Approx(2 * 0.75 * 0.9 / 1.65).margin(1e-12));
    CHECK(rep.n == 100);
}

TEST_CASE("compute_metrics boundary cases") {
    SECTION("perfect predictions") {
        ConfusionMatrix m;
        m.labels = {"a", "b", "c"};
        m.counts = {{7, 0, 0}, {0, 3, 0}, {0, 0, 5}};
        const auto rep = compute_metrics(m);
        CHECK(rep.accuracy == 1.0);
        CHECK(rep.macro.precision == 1.0);
        CHECK(rep.macro.recall == 1.0);
        CHECK(rep.macro.f1 == 1.0);
    }
    SECTION("constant classifier on balanced 3-class data") {
        ConfusionMatrix m;
        m.labels = {"a", "b", "c"};
        m.counts = {{10, 0, 0}, {10, 0, 0}, {10, 0, 0}};  // everything predicted 'a'
        const auto rep = compute_metrics(m);
        CHECK(rep.per_class.at("a").precision == Catch::Approx(1.0 / 3.0).margin(1e-15));
        CHECK(rep.per_class.at("a").recall == 1.0);
        CHECK(rep.per_class.at("a").f1 == Catch::Approx(0.5).margin(1e-15));
        CHECK(rep.per_class.at("b").f1 == 0.0);
        CHECK(rep.macro.f1 == Catch::Approx(1.0 / 6.0).margin(1e-12));
    }
    SECTION("empty evaluation is an error, not NaN") {
        ConfusionMatrix m;
        m.labels = {"a"};
        m.counts = {{0}};
        CHECK_THROWS_AS(compute_metrics(m), ContractError);
    }
}

TEST_CASE("metrics match the formula oracle on 10000 random matrices") {
    Rng rng(23);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto& scale = trial % 3 == 0   ? SentimentScale::two_point()
                            : trial % 3 == 1 ? SentimentScale::three_point()
                                             : SentimentScale::five_point();
        const int n = 1 + static_cast<int>(rng.below(40));
        const auto gold = random_labels(rng, scale, n);
        const auto pred = random_labels(rng, scale, n);
        const auto rep = compute_metrics(confusion(gold, pred, scale));
        const auto o = formula_oracle(gold, pred, scale.labels);
        worst = std::max(worst, std::abs(rep.accuracy - o.accuracy));
        worst = std::max(worst, std::abs(rep.macro.precision - o.macro.precision));
        worst = std::max(worst, std::abs(rep.macro.recall - o.macro.recall));
        worst = std::max(worst, std::abs(rep.macro.f1 - o.macro.f1));
        for (const auto& c : scale.labels) {
            worst = std::max(worst, std::abs(rep.per_class.at(c).precision - o.per_class.at(c).precision));
            worst = std::max(worst, std::abs(rep.per_class.at(c).recall - o.per_class.at(c).recall));
            worst = std::max(worst, std::abs(rep.per_class.at(c).f1 - o.per_class.at(c).f1));
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("metric identities") {
    Rng rng(31);
    const auto scale = SentimentScale::three_point();
    SECTION("micro recall equals accuracy") {
        for (int trial = 0; trial < 200; ++trial) {
            const int n = 5 + static_cast<int>(rng.below(100));
            const auto gold = random_labels(rng, scale, n);
            const auto pred = random_labels(rng, scale, n);
            const auto m = confusion(gold, pred, scale);
            const auto rep = compute_metrics(m);
            // micro recall = sum TP / sum (TP + FN) = trace / total
            double tp_sum = 0, tpfn_sum = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                tp_sum += static_cast<double>(m.counts[c][c]);
                for (std::size_t j = 0; j < 3; ++j) tpfn_sum += static_cast<double>(m.counts[c][j]);
            }
            CHECK(tp_sum / tpfn_sum == Catch::Approx(rep.accuracy).margin(1e-15));
        }
    }
    SECTION("label permutation leaves accuracy and macro values unchanged") {
        const auto gold = random_labels(rng, scale, 300);
        const auto pred = random_labels(rng, scale, 300);
        const auto rep = compute_metrics(confusion(gold, pred, scale));
        SentimentScale permuted = scale;
        std::swap(permuted.labels[0], permuted.labels[2]);
        const auto rep2 = compute_metrics(confusion(gold, pred, permuted));
        CHECK(rep.accuracy == rep2.accuracy);
        CHECK(rep.macro.precision == Catch::Approx(rep2.macro.precision).margin(1e-15));
        CHECK(rep.macro.f1 == Catch::Approx(rep2.macro.f1).margin(1e-15));
        for (const auto& c : scale.labels) {
            CHECK(rep.per_class.at(c).precision == rep2.per_class.at(c).precision);
            CHECK(rep.per_class.at(c).recall == rep2.per_class.at(c).recall);
        }
    }
    SECTION("two-class macro equals the mean of the per-class values") {
        const auto s2 = SentimentScale::two_point();
        const auto gold = random_labels(rng, s2, 200);
        const auto pred = random_labels(rng, s2, 200);
        const auto rep = compute_metrics(confusion(gold, pred, s2));
        const auto& a = rep.per_class.at("negative");
        const auto& b = rep.per_class.at("positive");
        CHECK(rep.macro.precision == Catch::Approx((a.precision + b.precision) / 2).margin(1e-15));
        CHECK(rep.macro.recall == Catch::Approx((a.recall + b.recall) / 2).margin(1e-15));
        CHECK(rep.macro.f1 == Catch::Approx((a.f1 + b.f1) / 2).margin(1e-15));
    }
}

TEST_CASE("formatting rounds half-up at four decimals") {
    CHECK(format_metric(0.54216) == "0.5422");
    CHECK(format_metric(0.12345) == "0.1235");
    CHECK(format_metric(1.0) == "1.0000");
    CHECK(format_metric(0.0) == "0.0000");
}

TEST_CASE("render_report") {
    SECTION("reference row renders the stored values") {
        const auto& rows = reference_results();
        const auto table = render_report({{rows[0].model, reference_row_report(rows[0])}});
        CHECK(table.find("BERT-SubTask-A") != std::string::npos);
        CHECK(table.find("0.6337") != std::string::npos);
        CHECK(table.find("0.6296") != std::string::npos);
        CHECK(table.find("0.6202") != std::string::npos);
        CHECK(table.find("0.5931") != std::string::npos);
    }
    SECTION("empty input renders the header only") {
        const auto table = render_report({});
        CHECK(table.find("Model") != std::string::npos);
        CHECK(table.find("F1 Score") != std::string::npos);
        CHECK(std::count(table.begin(), table.end(), '\n') == 1);
    }
    SECTION("json rows mirror the table") {
        MetricsReport rep;
        rep.accuracy = 0.5;
        rep.macro = {0.25, 0.75, 0.375};
        const auto j = report_rows_json({{"m", rep}});
        CHECK(j.at("rows").size() == 1);
        CHECK(j.at("rows")[0].at("accuracy").get<double>() == 0.5);
    }
}

TEST_CASE("metrics JSON round-trip") {
    ConfusionMatrix m;
    m.labels = {"negative", "neutral", "positive"};
    m.counts = {{5, 2, 1}, {0, 7, 3}, {2, 2, 9}};
    const auto rep = compute_metrics(m);
    const auto j = metrics_to_json(rep);
    const auto back = metrics_from_json(j);
    CHECK(back.accuracy == rep.accuracy);
    CHECK(back.n == rep.n);
    CHECK(back.macro.f1 == rep.macro.f1);
    CHECK(back.per_class.at("neutral").recall == rep.per_class.at("neutral").recall);
    CHECK(j.at("macro").at("avg_rec").get<double>() == rep.macro.recall);
}
