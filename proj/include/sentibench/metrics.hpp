#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentibench/common.hpp"
#include "sentibench/corpus.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Confusion matrix: rows = gold, columns = predicted, label order from the
// scale. Per-class counts fall out as TP = M[c][c], FP = column sum - TP,
// FN = row sum - TP, TN = total - TP - FP - FN.
// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::int64_t>> counts;

    std::int64_t total() const {
        std::int64_t t = 0;
        for (const auto& row : counts)
            for (auto c : row) t += c;
        return t;
    }
    std::int64_t trace() const {
        std::int64_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }
};

inline ConfusionMatrix confusion(const std::vector<std::string>& gold,
                                 const std::vector<std::string>& pred,
                                 const SentimentScale& scale) {
    if (gold.size() != pred.size())
        throw InputError("gold/pred length mismatch: " + std::to_string(gold.size()) + " vs " +
                         std::to_string(pred.size()));
    ConfusionMatrix m;
    m.labels = scale.labels;
    m.counts.assign(scale.size(), std::vector<std::int64_t>(scale.size(), 0));
    for (std::size_t k = 0; k < gold.size(); ++k) {
        const int i = scale.index_of(gold[k]);
        const int j = scale.index_of(pred[k]);
        if (i < 0) throw InputError("gold label '" + gold[k] + "' not on the scale");
        if (j < 0) throw InputError("predicted label '" + pred[k] + "' not on the scale");
        ++m.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return m;
}

// ---------------------------------------------------------------------------
// Metrics: accuracy, per-class precision/recall/F1 and their unweighted
// (macro) means. 0/0 divisions are defined as 0 -- a class that is never
// predicted has precision 0, a class that never occurs has recall 0.
// ---------------------------------------------------------------------------

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    std::map<std::string, ClassMetrics> per_class;
    ClassMetrics macro;
    std::int64_t n = 0;
};

namespace detail {
inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace detail

inline MetricsReport compute_metrics(const ConfusionMatrix& m) {
    const std::int64_t total = m.total();
    if (total == 0) throw ContractError("cannot compute metrics over an empty evaluation");

    MetricsReport rep;
    rep.n = total;
    rep.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);

    const std::size_t k = m.labels.size();
    for (std::size_t c = 0; c < k; ++c) {
        std::int64_t tp = m.counts[c][c];
        std::int64_t row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += m.counts[c][j];
            col += m.counts[j][c];
        }
        const std::int64_t fp = col - tp;
        const std::int64_t fn = row - tp;
        ClassMetrics cm;
        cm.precision = detail::safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
        cm.recall = detail::safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
        cm.f1 = detail::safe_div(2.0 * cm.precision * cm.recall, cm.precision + cm.recall);
        rep.per_class[m.labels[c]] = cm;
        rep.macro.precision += cm.precision / static_cast<double>(k);
        rep.macro.recall += cm.recall / static_cast<double>(k);
        rep.macro.f1 += cm.f1 / static_cast<double>(k);
    }
    return rep;
}

// JSON schema: accuracy, per_class.{label}.{precision,recall,f1}, macro
// (whose recall doubles as AvgRec and is labeled so), n.
inline nlohmann::json metrics_to_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["accuracy"] = rep.accuracy;
    j["n"] = rep.n;
    for (const auto& [label, cm] : rep.per_class) {
        j["per_class"][label] = {
            {"precision", cm.precision}, {"recall", cm.recall}, {"f1", cm.f1}};
    }
    j["macro"] = {{"precision", rep.macro.precision},
                  {"recall", rep.macro.recall},
                  {"f1", rep.macro.f1},
                  {"avg_rec", rep.macro.recall}};
    return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
    MetricsReport rep;
    rep.accuracy = j.at("accuracy").get<double>();
    rep.n = j.at("n").get<std::int64_t>();
    if (j.contains("per_class"))
        for (const auto& [label, cj] : j.at("per_class").items())
            rep.per_class[label] = {cj.at("precision").get<double>(),
                                    cj.at("recall").get<double>(), cj.at("f1").get<double>()};
    const auto& mj = j.at("macro");
    rep.macro = {mj.at("precision").get<double>(), mj.at("recall").get<double>(),
                 mj.at("f1").get<double>()};
    return rep;
}

// ---------------------------------------------------------------------------
// Rendering. Values round half-up at 4 decimals.
// ---------------------------------------------------------------------------

inline std::string format_metric(double v) {
    const double r = std::floor(v * 10000.0 + 0.5) / 10000.0;
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << r;
    return os.str();
}

// One row per experiment: macro precision/recall/F1 plus accuracy.
inline std::string render_report(
    const std::vector<std::pair<std::string, MetricsReport>>& results) {
    std::size_t name_w = std::string("Model").size();
    for (const auto& [name, rep] : results) name_w = std::max(name_w, name.size());

    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "Model" << std::right
       << std::setw(10) << "Accuracy" << std::setw(11) << "Precision" << std::setw(8) << "Recall"
       << std::setw(10) << "F1 Score" << '\n';
    for (const auto& [name, rep] : results) {
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << name << std::right
           << std::setw(10) << format_metric(rep.accuracy) << std::setw(11)
           << format_metric(rep.macro.precision) << std::setw(8) << format_metric(rep.macro.recall)
           << std::setw(10) << format_metric(rep.macro.f1) << '\n';
    }
    return os.str();
}

inline nlohmann::json report_rows_json(
    const std::vector<std::pair<std::string, MetricsReport>>& results) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [name, rep] : results) {
        rows.push_back({{"model", name},
                        {"accuracy", rep.accuracy},
                        {"precision", rep.macro.precision},
                        {"recall", rep.macro.recall},
                        {"f1", rep.macro.f1}});
    }
    return nlohmann::json{{"rows", rows}};
}

}  // namespace sentibench
