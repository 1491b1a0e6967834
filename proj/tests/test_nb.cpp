#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unistd.h>

#include "sentibench/fixtures.hpp"
#include "sentibench/nb.hpp"

using namespace sentibench;

namespace {

Dataset dataset_from(const std::vector<std::pair<std::string, std::string>>& docs,
                     const SentimentScale& scale) {
    Dataset ds;
    ds.scale = scale;
    long i = 0;
    for (const auto& [label, text] : docs) {
        LabeledTweet tw;
        tw.id = std::to_string(i++);
        tw.label = label;
        tw.raw_text = text;
        tw.norm_text = normalize_tweet(text);
        ds.examples.push_back(tw);
    }
    return ds;
}

// Direct evaluation of the smoothed formula: P(w|c) = (count+a)/(total_c + a(|V|+1)),
// unknown bucket a/(same). Recounts from scratch.
struct NBOracle {
    std::map<std::string, long> docs;
    std::map<std::string, std::map<std::string, long>> counts;
    std::map<std::string, long> totals;
    std::set<std::string> vocab;
    long n_docs = 0;
    double alpha;

    NBOracle(const Dataset& ds, double a) : alpha(a) {
        for (const auto& tw : ds.examples) {
            ++docs[tw.label];
            ++n_docs;
            for (const auto& w : split_ws(tw.norm_text)) {
                ++counts[tw.label][w];
                ++totals[tw.label];
                vocab.insert(w);
            }
        }
    }

    double log_likelihood(const std::string& c, const std::string& w) const {
        const double denom =
            static_cast<double>(totals.count(c) ? totals.at(c) : 0) +
            alpha * (static_cast<double>(vocab.size()) + 1.0);
        long cw = 0;
        if (vocab.count(w) && counts.count(c)) {
            auto it = counts.at(c).find(w);
            if (it != counts.at(c).end()) cw = it->second;
        }
        const double num = vocab.count(w) ? static_cast<double>(cw) + alpha : alpha;
        return std::log(num / denom);
    }

    double score(const std::string& c, const std::string& text) const {
        double s = std::log(static_cast<double>(docs.at(c)) / static_cast<double>(n_docs));
        for (const auto& w : split_ws(normalize_tweet(text))) s += log_likelihood(c, w);
        return s;
    }
};

const SentimentScale kCJ{ScaleKind::two_point, {"c", "j"}};

Dataset worked_example() {
    return dataset_from({{"c", "chinese beijing chinese"},
                         {"c", "chinese chinese shanghai"},
                         {"c", "chinese macao"},
                         {"j", "tokyo japan chinese"}},
                        kCJ);
}

}  // namespace

TEST_CASE("train_nb on the add-one worked example") {
    const Dataset ds = worked_example();
    const NBModel model = train_nb(ds, 1.0);

    CHECK(std::exp(model.log_prior.at("c")) == Catch::Approx(0.75).margin(1e-12));
    CHECK(std::exp(model.log_prior.at("j")) == Catch::Approx(0.25).margin(1e-12));
    // P(chinese|c) = (5+1)/(8 + 1*(6+1)) = 6/15
    CHECK(std::exp(model.log_likelihood.at("c").at("chinese")) ==
          Catch::Approx(6.0 / 15.0).margin(1e-12));
    CHECK(std::exp(model.log_likelihood.at("j").at("chinese")) ==
          Catch::Approx(2.0 / 10.0).margin(1e-12));
    CHECK(model.vocab_words.size() == 6);

    // per-class distributions sum to one over vocab + unknown bucket
    for (const auto& c : model.classes) {
        double sum = std::exp(model.log_unknown.at(c));
        for (const auto& [w, lp] : model.log_likelihood.at(c)) sum += std::exp(lp);
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
    double prior_sum = 0.0;
    for (const auto& c : model.classes) prior_sum += std::exp(model.log_prior.at(c));
    CHECK(prior_sum == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("predict_nb classifies the worked-example test document") {
    const Dataset ds = worked_example();
    const NBModel model = train_nb(ds, 1.0);
    const NBOracle oracle(ds, 1.0);
    const std::string doc = "chinese chinese chinese tokyo japan";

    const auto [label, scores] = predict_nb(model, doc);
    CHECK(label == "c");
    CHECK(scores.at("c") == Catch::Approx(oracle.score("c", doc)).margin(1e-9));
    CHECK(scores.at("j") == Catch::Approx(oracle.score("j", doc)).margin(1e-9));
    CHECK(scores.at("c") > scores.at("j"));
}

TEST_CASE("single class, single doc, values from the oracle") {
    const Dataset ds = dataset_from({{"c", "a"}}, {ScaleKind::two_point, {"c", "j"}});
    const NBModel model = train_nb(ds, 1.0);  // class j dropped with a warning
    const NBOracle oracle(ds, 1.0);
    CHECK(model.classes == std::vector<std::string>{"c"});
    CHECK(model.log_likelihood.at("c").at("a") ==
          Catch::Approx(oracle.log_likelihood("c", "a")).margin(1e-12));
    CHECK(nb_probabilities(model, "a").at("c") == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("train_nb error paths") {
    Dataset empty;
    empty.scale = SentimentScale::two_point();
    CHECK_THROWS_AS(train_nb(empty, 1.0), InputError);
    CHECK_THROWS_AS(train_nb(worked_example(), 0.0), ConfigError);
    CHECK_THROWS_AS(train_nb(worked_example(), -1.0), ConfigError);
}

TEST_CASE("identical corpora per class give identical likelihood tables") {
    const Dataset ds = dataset_from({{"c", "same words here"}, {"j", "same words here"}}, kCJ);
    const NBModel model = train_nb(ds, 1.0);
    for (const auto& w : model.vocab_words)
        CHECK(model.log_likelihood.at("c").at(w) == model.log_likelihood.at("j").at(w));
}

TEST_CASE("prediction edge cases") {
    const Dataset ds = dataset_from({{"c", "aa bb"}, {"c", "aa"}, {"j", "zz yy"}}, kCJ);
    const NBModel model = train_nb(ds, 1.0);
    SECTION("empty text falls back to the priors") {
        const auto [label, scores] = predict_nb(model, "");
        CHECK(label == "c");  // 2/3 prior beats 1/3
        CHECK(scores.at("c") == Catch::Approx(std::log(2.0 / 3.0)).margin(1e-12));
    }
    SECTION("all-unknown words with balanced priors tie-break to scale order") {
        const Dataset bal = dataset_from({{"c", "aa"}, {"j", "zz"}}, kCJ);
        const NBModel m2 = train_nb(bal, 1.0);
        const auto [label, scores] = predict_nb(m2, "qq rr ss");
        CHECK(scores.at("c") == Catch::Approx(scores.at("j")).margin(1e-12));
        CHECK(label == "c");  // first on the scale
    }
}

TEST_CASE("score shift invariance") {
    const Dataset ds = worked_example();
    const NBModel model = train_nb(ds, 1.0);
    auto scores = nb_scores(model, "chinese tokyo");
    const auto probs = softmax_normalize(scores);
    for (auto& [c, s] : scores) s += 123.456;
    const auto probs_shifted = softmax_normalize(scores);
    for (const auto& [c, p] : probs)
        CHECK(p == Catch::Approx(probs_shifted.at(c)).margin(1e-12));
    double total = 0.0;
    for (const auto& [c, p] : probs) total += p;
    CHECK(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("identical scores normalize to 1/k") {
    const auto probs = softmax_normalize({{"a", -3.5}, {"b", -3.5}, {"c", -3.5}});
    for (const auto& [c, p] : probs) CHECK(p == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

namespace {

// Pure disjoint-lexicon corpus: every word is class-specific, so every
// document carries unambiguous evidence.
Dataset disjoint_lexicon_dataset(std::uint64_t seed, int count) {
    const std::vector<std::string> neg = {"awful", "dire", "grim", "vile", "sour", "bleak"};
    const std::vector<std::string> pos = {"great", "sunny", "crisp", "lush", "warm", "bright"};
    Rng rng(seed);
    std::vector<std::pair<std::string, std::string>> docs;
    for (int i = 0; i < count; ++i) {
        const bool positive = i % 2 == 0;
        const auto& lex = positive ? pos : neg;
        std::string text;
        const int len = 2 + static_cast<int>(rng.below(4));
        for (int w = 0; w < len; ++w)
            text += lex[static_cast<std::size_t>(rng.below(lex.size()))] + " ";
        docs.emplace_back(positive ? "positive" : "negative", text);
    }
    return dataset_from(docs, SentimentScale::two_point());
}

}  // namespace

TEST_CASE("duplicating the training corpus preserves priors and decisions") {
    const Dataset ds = disjoint_lexicon_dataset(21, 80);
    Dataset doubled = ds;
    for (const auto& tw : ds.examples) doubled.examples.push_back(tw);

    const NBModel m1 = train_nb(ds, 1.0);
    const NBModel m2 = train_nb(doubled, 1.0);
    for (const auto& c : m1.classes)
        CHECK(m1.log_prior.at(c) == Catch::Approx(m2.log_prior.at(c)).margin(1e-12));

    const Dataset probe = disjoint_lexicon_dataset(22, 60);
    for (const auto& tw : probe.examples)
        CHECK(predict_nb(m1, tw.norm_text).first == predict_nb(m2, tw.norm_text).first);
}

TEST_CASE("linearly separable data trains to accuracy 1.0") {
    const Dataset ds = disjoint_lexicon_dataset(8, 120);
    const NBModel model = train_nb(ds, 1.0);
    long correct = 0;
    for (const auto& tw : ds.examples)
        correct += (predict_nb(model, tw.norm_text).first == tw.label);
    CHECK(correct == static_cast<long>(ds.size()));
}

TEST_CASE("model probabilities match the brute-force oracle on small instances") {
    Rng rng(41);
    const std::vector<std::string> lexicon = {"w0", "w1", "w2", "w3", "w4", "w5"};
    for (int trial = 0; trial < 60; ++trial) {
        const int n_classes = 2 + static_cast<int>(rng.below(2));
        SentimentScale scale{ScaleKind::three_point, {}};
        for (int c = 0; c < n_classes; ++c) scale.labels.push_back("k" + std::to_string(c));
        std::vector<std::pair<std::string, std::string>> docs;
        const int n_docs = 2 + static_cast<int>(rng.below(19));
        for (int d = 0; d < n_docs; ++d) {
            std::string text;
            const int len = 1 + static_cast<int>(rng.below(5));
            for (int w = 0; w < len; ++w)
                text += lexicon[static_cast<std::size_t>(rng.below(lexicon.size()))] + " ";
            docs.emplace_back(scale.labels[static_cast<std::size_t>(rng.below(scale.size()))],
                              text);
        }
        const Dataset ds = dataset_from(docs, scale);
        const double alpha = 0.25 + rng.uniform() * 2.0;
        const NBModel model = train_nb(ds, alpha);
        const NBOracle oracle(ds, alpha);

        std::string test_text = "w1 w4 unseen";
        const auto scores = nb_scores(model, test_text);
        std::map<std::string, double> oracle_scores;
        for (const auto& c : model.classes) oracle_scores[c] = oracle.score(c, test_text);
        const auto probs = nb_probabilities(model, test_text);
        const auto oracle_probs = softmax_normalize(oracle_scores);
        for (const auto& c : model.classes) {
            CHECK(scores.at(c) == Catch::Approx(oracle_scores.at(c)).margin(1e-9));
            CHECK(probs.at(c) == Catch::Approx(oracle_probs.at(c)).margin(1e-9));
        }
    }
}

TEST_CASE("model JSON round-trip preserves predictions exactly") {
    FixtureOptions opt;
    opt.subtask = Subtask::A;
    opt.count = 60;
    opt.seed = 31;
    const Dataset ds = make_fixture(opt);
    const NBModel model = train_nb(ds, 0.7);

    const std::string path = "/tmp/sb_nb_test_" + std::to_string(::getpid()) + ".json";
    save_nb(model, path);
    const NBModel back = load_nb(path);
    std::remove(path.c_str());

    CHECK(back.alpha == model.alpha);
    CHECK(back.classes == model.classes);
    for (const auto& tw : ds.examples) {
        const auto s1 = nb_scores(model, tw.norm_text);
        const auto s2 = nb_scores(back, tw.norm_text);
        for (const auto& c : model.classes) CHECK(s1.at(c) == s2.at(c));
    }
}

TEST_CASE("loading a non-model file fails cleanly") {
    const std::string path = "/tmp/sb_nb_bad_" + std::to_string(::getpid()) + ".json";
    {
        std::ofstream out(path);
        out << "{\"hello\": 1}";
    }
    CHECK_THROWS_AS(load_nb(path), FormatError);
    std::remove(path.c_str());
}
