#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentibench/common.hpp"
#include "sentibench/corpus.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Multinomial Naive Bayes over unigram counts of normalized text, add-alpha
// smoothed, in log space. One shared smoothed unknown-word bucket per class
// keeps prediction total:
//
//   P(w|c) = (count(w,c) + alpha) / (sum_w' count(w',c) + alpha * (|V| + 1))
//   P(unknown|c) = alpha / (same denominator)
// ---------------------------------------------------------------------------

struct NBModel {
    SentimentScale scale;
    double alpha = 1.0;
    std::vector<std::string> classes;  // scale order, zero-example classes dropped
    std::map<std::string, double> log_prior;
    std::map<std::string, std::map<std::string, double>> log_likelihood;  // class -> word -> logp
    std::map<std::string, double> log_unknown;  // class -> logp of the unknown bucket
    std::set<std::string> vocab_words;
};

inline NBModel train_nb(const Dataset& ds, double alpha = 1.0) {
    if (ds.empty()) throw InputError("cannot train Naive Bayes on an empty dataset");
    if (!(alpha > 0.0)) throw ConfigError("smoothing alpha must be > 0");

    NBModel model;
    model.scale = ds.scale;
    model.alpha = alpha;

    std::map<std::string, long> doc_count;
    std::map<std::string, std::map<std::string, long>> word_count;
    std::map<std::string, long> total_words;
    for (const auto& tw : ds.examples) {
        ++doc_count[tw.label];
        for (const auto& w : split_ws(tw.norm_text)) {
            ++word_count[tw.label][w];
            ++total_words[tw.label];
            model.vocab_words.insert(w);
        }
    }

    const double n_docs = static_cast<double>(ds.size());
    const double v1 = static_cast<double>(model.vocab_words.size()) + 1.0;  // + unknown bucket
    for (const auto& label : ds.scale.labels) {
        auto it = doc_count.find(label);
        if (it == doc_count.end()) {
            std::cerr << "warning: class '" << label
                      << "' has no training examples and is dropped from the model\n";
            continue;
        }
        model.classes.push_back(label);
        model.log_prior[label] = std::log(static_cast<double>(it->second) / n_docs);
        const double denom = static_cast<double>(total_words[label]) + alpha * v1;
        auto& table = model.log_likelihood[label];
        for (const auto& w : model.vocab_words) {
            long c = 0;
            auto wit = word_count[label].find(w);
            if (wit != word_count[label].end()) c = wit->second;
            table[w] = std::log((static_cast<double>(c) + alpha) / denom);
        }
        model.log_unknown[label] = std::log(alpha / denom);
    }
    return model;
}

// Unnormalized log-posterior of every class for a text.
inline std::map<std::string, double> nb_scores(const NBModel& model, const std::string& text) {
    const auto words = split_ws(normalize_tweet(text));
    std::map<std::string, double> scores;
    for (const auto& c : model.classes) {
        double s = model.log_prior.at(c);
        const auto& table = model.log_likelihood.at(c);
        for (const auto& w : words) {
            auto it = table.find(w);
            s += it == table.end() ? model.log_unknown.at(c) : it->second;
        }
        scores[c] = s;
    }
    return scores;
}

// Argmax with ties broken by scale order (the first best class wins).
inline std::pair<std::string, std::map<std::string, double>> predict_nb(const NBModel& model,
                                                                        const std::string& text) {
    auto scores = nb_scores(model, text);
    std::string best;
    double best_score = 0.0;
    for (const auto& c : model.classes) {  // scale order
        const double s = scores.at(c);
        if (best.empty() || s > best_score) {
            best = c;
            best_score = s;
        }
    }
    return {best, std::move(scores)};
}

// Shift-invariant softmax over a score map; sums to 1.
inline std::map<std::string, double> softmax_normalize(const std::map<std::string, double>& scores) {
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& [c, s] : scores) mx = std::max(mx, s);
    double z = 0.0;
    std::map<std::string, double> probs;
    for (const auto& [c, s] : scores) {
        probs[c] = std::exp(s - mx);
        z += probs[c];
    }
    for (auto& [c, p] : probs) p /= z;
    return probs;
}

inline std::map<std::string, double> nb_probabilities(const NBModel& model,
                                                      const std::string& text) {
    return softmax_normalize(nb_scores(model, text));
}

// ---------------------------------------------------------------------------
// Model file: documented JSON (priors, likelihood table, unknown bucket,
// alpha, scale). nlohmann serializes doubles losslessly.
// ---------------------------------------------------------------------------

inline nlohmann::json nb_to_json(const NBModel& model) {
    nlohmann::json j;
    j["format"] = "sentibench-nb";
    j["version"] = 1;
    j["alpha"] = model.alpha;
    j["scale"] = {{"kind", model.scale.kind == ScaleKind::three_point   ? "three_point"
                           : model.scale.kind == ScaleKind::two_point ? "two_point"
                                                                      : "five_point"},
                  {"labels", model.scale.labels}};
    j["classes"] = model.classes;
    j["log_prior"] = model.log_prior;
    j["log_unknown"] = model.log_unknown;
    j["log_likelihood"] = model.log_likelihood;
    j["vocab_words"] = std::vector<std::string>(model.vocab_words.begin(), model.vocab_words.end());
    return j;
}

inline NBModel nb_from_json(const nlohmann::json& j) {
    if (!j.contains("format") || j.at("format") != "sentibench-nb")
        throw FormatError("not a sentibench Naive Bayes model file");
    NBModel model;
    model.alpha = j.at("alpha").get<double>();
    const std::string kind = j.at("scale").at("kind").get<std::string>();
    if (kind == "three_point")
        model.scale = SentimentScale::three_point();
    else if (kind == "two_point")
        model.scale = SentimentScale::two_point();
    else if (kind == "five_point")
        model.scale = SentimentScale::five_point();
    else
        throw FormatError("unknown scale kind '" + kind + "'");
    if (j.at("scale").at("labels").get<std::vector<std::string>>() != model.scale.labels)
        throw FormatError("scale labels do not match the declared kind");
    model.classes = j.at("classes").get<std::vector<std::string>>();
    model.log_prior = j.at("log_prior").get<std::map<std::string, double>>();
    model.log_unknown = j.at("log_unknown").get<std::map<std::string, double>>();
    model.log_likelihood =
        j.at("log_likelihood").get<std::map<std::string, std::map<std::string, double>>>();
    const auto words = j.at("vocab_words").get<std::vector<std::string>>();
    model.vocab_words.insert(words.begin(), words.end());
    return model;
}

inline void save_nb(const NBModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << nb_to_json(model).dump(2) << '\n';
    if (!out) throw IoError("write failure on " + path);
}

inline NBModel load_nb(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid model JSON in " + path + ": " + e.what());
    }
    return nb_from_json(j);
}

}  // namespace sentibench
