#pragma once

#include <string>
#include <vector>

#include "sentibench/metrics.hpp"

namespace sentibench {

// Published full-scale results for the three subtasks (fine-tuned BERT-base
// vs. a Naive Bayes baseline). These are reference targets for report replay
// and delta tables only: desk-scale runs are not expected to reproduce them,
// and nothing in the test suite asserts against them.

struct ReferenceRow {
    const char* model;
    const char* subtask;
    double accuracy;
    double precision;
    double recall;
    double f1;
};

inline const std::vector<ReferenceRow>& reference_results() {
    static const std::vector<ReferenceRow> rows = {
        {"BERT-SubTask-A", "A", 0.6337, 0.6296, 0.6202, 0.5931},
        {"BERT-SubTask-B", "B", 0.8969, 0.8381, 0.8882, 0.8484},
        {"BERT-SubTask-C", "C", 0.5422, 0.9004, 0.5422, 0.6346},
        {"Baseline A", "A", 0.3686, 0.3176, 0.3490, 0.2131},
        {"Baseline B", "B", 0.7783, 0.7783, 0.8900, 0.8753},
        {"Baseline C", "C", 0.3836, 0.2153, 0.2016, 0.1142},
    };
    return rows;
}

// Published dataset sizes (train / test / devtest) used by the conditional
// loader check when official files are supplied.
struct ReferenceDatasetSizes {
    const char* subtask;
    long train;
    long test;
    long devtest;
};

inline const std::vector<ReferenceDatasetSizes>& reference_dataset_sizes() {
    static const std::vector<ReferenceDatasetSizes> sizes = {
        {"A", 5868, 20632, 2000},
        {"B", 4309, 10551, 1417},
        {"C", 5868, 20632, 2000},
    };
    return sizes;
}

inline MetricsReport reference_row_report(const ReferenceRow& r) {
    MetricsReport rep;
    rep.accuracy = r.accuracy;
    rep.macro.precision = r.precision;
    rep.macro.recall = r.recall;
    rep.macro.f1 = r.f1;
    return rep;
}

}  // namespace sentibench
