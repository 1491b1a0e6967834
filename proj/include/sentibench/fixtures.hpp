#pragma once

#include <string>
#include <vector>

#include "sentibench/common.hpp"
#include "sentibench/corpus.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Seeded lexicon-template generator for self-contained fixtures.
//
// Each sentiment level -2..2 owns a disjoint word list; a tweet is a template
// filled with a topic and two words drawn from its level's list, with light
// decoration (mentions, URLs, HTML escapes, casing) to exercise
// normalization. Because the lexicons are disjoint the datasets are linearly
// separable, which is what the qualitative acceptance runs need.
// ---------------------------------------------------------------------------

namespace fixture_detail {

inline const std::vector<std::string>& lexicon(int level) {
    static const std::vector<std::string> minus2 = {
        "atrocious", "abysmal", "horrendous", "disastrous", "dreadful", "appalling",
        "unbearable", "catastrophic"};
    static const std::vector<std::string> minus1 = {
        "bad", "poor", "weak", "dull", "subpar", "annoying", "mediocre", "tedious"};
    static const std::vector<std::string> zero = {
        "okay", "average", "ordinary", "typical", "standard", "plain", "usual", "routine"};
    static const std::vector<std::string> plus1 = {
        "good", "nice", "decent", "pleasant", "solid", "enjoyable", "likable", "fine"};
    static const std::vector<std::string> plus2 = {
        "fantastic", "amazing", "phenomenal", "spectacular", "magnificent", "superb",
        "glorious", "stunning"};
    switch (level) {
        case -2: return minus2;
        case -1: return minus1;
        case 0: return zero;
        case 1: return plus1;
        default: return plus2;
    }
}

inline const std::vector<std::string>& topics() {
    static const std::vector<std::string> t = {"phones", "movies", "coffee",  "weather",
                                               "football", "games", "traffic", "music"};
    return t;
}

// {} = topic, <1>/<2>/<3> = sentiment words
inline const std::vector<std::string>& templates() {
    static const std::vector<std::string> t = {
        "the {} today was <1>, <2> and honestly <3>",
        "feeling <1> about {} again, just <2> and <3>",
        "that {} update is <1>, totally <2> and <3> stuff",
        "<1> <2> <3> {} all week long",
        "my take on {}: <1>, <2> and <3>",
        "so the {} turned out <1>, kind of <2>, even <3>",
    };
    return t;
}

inline std::string pick(Rng& rng, const std::vector<std::string>& v) {
    return v[static_cast<std::size_t>(rng.below(v.size()))];
}

inline std::string replace_first(std::string s, const std::string& what, const std::string& with) {
    const auto pos = s.find(what);
    if (pos != std::string::npos) s.replace(pos, what.size(), with);
    return s;
}

}  // namespace fixture_detail

struct FixtureOptions {
    Subtask subtask = Subtask::B;
    int count = 200;
    std::uint64_t seed = 0;
    std::vector<int> levels;        // defaults per subtask when empty
    double decoration_rate = 0.15;  // chance of a mention/URL/escape per tweet
};

namespace fixture_detail {

inline std::vector<int> default_levels(Subtask s) {
    switch (s) {
        case Subtask::A: return {-2, -1, 0, 1, 2};
        case Subtask::B: return {-2, -1, 1, 2};
        case Subtask::C: return {-2, -1, 0, 1, 2};
    }
    return {-1, 1};
}

inline std::string label_for(Subtask s, int level) {
    switch (s) {
        case Subtask::A: return level < 0 ? "negative" : level > 0 ? "positive" : "neutral";
        case Subtask::B: return level < 0 ? "negative" : "positive";
        case Subtask::C: return std::to_string(level);
    }
    return "neutral";
}

inline LabeledTweet make_tweet(Rng& rng, Subtask subtask, int level, long serial,
                               double decoration_rate) {
    const auto& lex = lexicon(level);
    std::string text = pick(rng, templates());
    const std::string topic = pick(rng, topics());
    text = replace_first(text, "{}", topic);
    std::string w1 = pick(rng, lex);
    if (rng.uniform() < 0.3)  // case noise; normalization lowercases it away
        for (auto& c : w1) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    text = replace_first(text, "<1>", w1);
    text = replace_first(text, "<2>", pick(rng, lex));
    text = replace_first(text, "<3>", pick(rng, lex));
    if (rng.uniform() < decoration_rate) {
        switch (rng.below(3)) {
            case 0: text = "@friend" + std::to_string(rng.below(90)) + " " + text; break;
            case 1: text += " http://t.co/" + std::to_string(100 + rng.below(900)); break;
            default: text += " &amp; more"; break;
        }
    }

    LabeledTweet tw;
    tw.id = "9" + std::to_string(100000000 + serial);
    if (subtask != Subtask::A) tw.topic = topic;
    tw.label = label_for(subtask, level);
    tw.raw_text = text;
    tw.norm_text = normalize_tweet(text);
    return tw;
}

}  // namespace fixture_detail

inline Dataset make_fixture(const FixtureOptions& opt) {
    if (opt.count <= 0) throw ConfigError("fixture count must be positive");
    auto levels = opt.levels.empty() ? fixture_detail::default_levels(opt.subtask) : opt.levels;

    Rng rng(opt.seed);
    Dataset ds;
    ds.subtask = opt.subtask;
    ds.scale = SentimentScale::for_subtask(opt.subtask);
    ds.source_path = "<fixture>";
    for (int i = 0; i < opt.count; ++i) {
        const int level = levels[static_cast<std::size_t>(i) % levels.size()];
        ds.examples.push_back(
            fixture_detail::make_tweet(rng, opt.subtask, level, i, opt.decoration_rate));
    }
    return ds;
}

// Matched binary / five-point datasets over the same tweets: the five-point
// labels refine the binary sign partition, so the binary task can only be
// easier. Level 0 is excluded by default because it has no binary image.
struct MatchedPair {
    Dataset binary;
    Dataset five_point;
};

inline MatchedPair make_matched_pair(int count, std::uint64_t seed,
                                     const std::vector<int>& levels = {-2, -1, 1, 2}) {
    if (count <= 0) throw ConfigError("fixture count must be positive");
    for (int l : levels)
        if (l == 0) throw ConfigError("matched fixtures cannot include level 0");

    Rng rng(seed);
    MatchedPair mp;
    mp.binary.subtask = Subtask::B;
    mp.binary.scale = SentimentScale::two_point();
    mp.binary.source_path = "<fixture>";
    mp.five_point.subtask = Subtask::C;
    mp.five_point.scale = SentimentScale::five_point();
    mp.five_point.source_path = "<fixture>";
    for (int i = 0; i < count; ++i) {
        const int level = levels[static_cast<std::size_t>(i) % levels.size()];
        // one draw stream; relabel the identical tweet for both scales
        LabeledTweet tw = fixture_detail::make_tweet(rng, Subtask::B, level, i, 0.15);
        tw.label = fixture_detail::label_for(Subtask::B, level);
        mp.binary.examples.push_back(tw);
        tw.label = fixture_detail::label_for(Subtask::C, level);
        mp.five_point.examples.push_back(tw);
    }
    return mp;
}

// Train/dev/test TSV files under dir (created by the caller).
struct FixtureFiles {
    std::string train, dev, test;
};

inline FixtureFiles write_fixture_splits(const std::string& dir, const FixtureOptions& opt,
                                         double train_fraction = 0.6, double dev_fraction = 0.5) {
    Dataset all = make_fixture(opt);
    auto [train, rest] = stratified_split(all, train_fraction, opt.seed + 1);
    auto [dev, test] = stratified_split(rest, dev_fraction, opt.seed + 2);
    FixtureFiles files;
    files.train = dir + "/train.tsv";
    files.dev = dir + "/dev.tsv";
    files.test = dir + "/test.tsv";
    save_dataset(train, files.train);
    save_dataset(dev, files.dev);
    save_dataset(test, files.test);
    return files;
}

}  // namespace sentibench
