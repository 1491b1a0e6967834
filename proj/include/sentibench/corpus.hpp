#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sentibench/common.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Label scales and datasets for the three classification subtasks:
//   A: message polarity on {negative, neutral, positive}
//   B: topic-conditioned polarity on {negative, positive}
//   C: topic-conditioned polarity on the ordinal scale -2..2
// ---------------------------------------------------------------------------

enum class Subtask { A, B, C };

inline const char* subtask_name(Subtask s) {
    switch (s) {
        case Subtask::A: return "A";
        case Subtask::B: return "B";
        case Subtask::C: return "C";
    }
    return "?";
}

inline Subtask subtask_from_string(const std::string& s) {
    if (s == "A" || s == "a") return Subtask::A;
    if (s == "B" || s == "b") return Subtask::B;
    if (s == "C" || s == "c") return Subtask::C;
    throw ConfigError("unknown subtask '" + s + "' (expected A, B or C)");
}

enum class ScaleKind { three_point, two_point, five_point };

struct SentimentScale {
    ScaleKind kind;
    std::vector<std::string> labels;  // fixed order; first label wins ties

    static SentimentScale three_point() {
        return {ScaleKind::three_point, {"negative", "neutral", "positive"}};
    }
    static SentimentScale two_point() {
        return {ScaleKind::two_point, {"negative", "positive"}};
    }
    static SentimentScale five_point() {
        return {ScaleKind::five_point, {"-2", "-1", "0", "1", "2"}};
    }
    static SentimentScale for_subtask(Subtask s) {
        switch (s) {
            case Subtask::A: return three_point();
            case Subtask::B: return two_point();
            case Subtask::C: return five_point();
        }
        return three_point();
    }

    int index_of(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<int>(i);
        return -1;
    }
    bool contains(const std::string& label) const { return index_of(label) >= 0; }
    std::size_t size() const { return labels.size(); }

    bool operator==(const SentimentScale& o) const {
        return kind == o.kind && labels == o.labels;
    }
};

struct LabeledTweet {
    std::string id;
    std::string topic;  // empty for subtask A
    std::string label;
    std::string raw_text;
    std::string norm_text;

    bool operator==(const LabeledTweet& o) const {
        return id == o.id && topic == o.topic && label == o.label &&
               raw_text == o.raw_text && norm_text == o.norm_text;
    }
};

struct Dataset {
    Subtask subtask = Subtask::A;
    SentimentScale scale = SentimentScale::three_point();
    std::vector<LabeledTweet> examples;
    std::string source_path;
    long not_available_count = 0;  // lines skipped for the "Not Available" placeholder

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

// ---------------------------------------------------------------------------
// Tweet normalization.
//
// Deterministic pipeline, applied in this order:
//   1. unescape the HTML entities &amp; &lt; &gt; &quot; (to a fixed point,
//      so doubly-escaped text also settles and the function stays idempotent)
//   2. replace every URL (http://, https:// or www. prefix, plus the rest of
//      the token) with <url>
//   3. replace every @-mention with <user>
//   4. ASCII-lowercase
//   5. collapse whitespace runs to single spaces and trim
//
// The <user>/<url> masking doubles as PII removal: normalized text never
// contains a handle or a URL.
// ---------------------------------------------------------------------------

namespace detail {

inline bool iequal_prefix(const std::string& s, std::size_t pos, const char* prefix) {
    for (std::size_t k = 0; prefix[k] != '\0'; ++k) {
        if (pos + k >= s.size()) return false;
        if (std::tolower(static_cast<unsigned char>(s[pos + k])) != prefix[k]) return false;
    }
    return true;
}

// Case-insensitive: &AMP; lowercases to &amp; later in the pipeline, so it
// has to unescape here or normalization would not be idempotent.
inline bool unescape_entities_once(const std::string& in, std::string& out) {
    static const std::pair<const char*, char> kEntities[] = {
        {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}};
    out.clear();
    out.reserve(in.size());
    bool changed = false;
    std::size_t i = 0;
    while (i < in.size()) {
        bool hit = false;
        if (in[i] == '&') {
            for (const auto& [ent, ch] : kEntities) {
                const std::size_t n = std::char_traits<char>::length(ent);
                if (iequal_prefix(in, i, ent)) {
                    out.push_back(ch);
                    i += n;
                    hit = true;
                    changed = true;
                    break;
                }
            }
        }
        if (!hit) out.push_back(in[i++]);
    }
    return changed;
}

inline bool is_word_char(char c) {
    const unsigned char u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_';
}

}  // namespace detail

inline std::string normalize_tweet(const std::string& raw) {
    // 1. entities, to a fixed point
    std::string cur = raw, next;
    while (detail::unescape_entities_once(cur, next)) cur.swap(next);

    // 2. URLs: the prefix and everything up to the next whitespace
    std::string buf;
    buf.reserve(cur.size());
    for (std::size_t i = 0; i < cur.size();) {
        if (detail::iequal_prefix(cur, i, "http://") || detail::iequal_prefix(cur, i, "https://") ||
            detail::iequal_prefix(cur, i, "www.")) {
            buf += "<url>";
            while (i < cur.size() && !std::isspace(static_cast<unsigned char>(cur[i]))) ++i;
        } else {
            buf.push_back(cur[i++]);
        }
    }

    // 3. mentions: '@' followed by word characters
    cur.clear();
    cur.reserve(buf.size());
    for (std::size_t i = 0; i < buf.size();) {
        if (buf[i] == '@' && i + 1 < buf.size() && detail::is_word_char(buf[i + 1])) {
            cur += "<user>";
            ++i;
            while (i < buf.size() && detail::is_word_char(buf[i])) ++i;
        } else {
            cur.push_back(buf[i++]);
        }
    }

    // 4 + 5. lowercase, collapse whitespace, trim
    std::string out;
    out.reserve(cur.size());
    bool pending_space = false;
    for (char c : cur) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// TSV I/O.
//
// Record layouts (UTF-8, LF or CRLF):
//   subtask A:      id <TAB> label <TAB> text
//   subtasks B, C:  id <TAB> topic <TAB> label <TAB> text
// The text field is last and may itself contain tabs. Label tokens are
// negative|neutral|positive for A, negative|positive for B, and the integer
// strings -2..2 for C. Lines whose text is exactly "Not Available" are
// placeholders for deleted tweets; they are skipped and counted.
// ---------------------------------------------------------------------------

inline Dataset load_dataset(const std::string& path, Subtask subtask) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path);

    Dataset ds;
    ds.subtask = subtask;
    ds.scale = SentimentScale::for_subtask(subtask);
    ds.source_path = path;

    const bool has_topic = subtask != Subtask::A;
    const int n_fixed = has_topic ? 3 : 2;  // fields before the text field

    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();

        std::vector<std::string> head;
        std::size_t start = 0;
        for (int f = 0; f < n_fixed; ++f) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos)
                throw ParseError("expected " + std::to_string(n_fixed + 1) + " tab-separated fields", lineno);
            head.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        const std::string text = line.substr(start);

        LabeledTweet tw;
        tw.id = head[0];
        if (has_topic) tw.topic = head[1];
        tw.label = head[has_topic ? 2 : 1];
        tw.raw_text = text;

        if (text == "Not Available") {
            ++ds.not_available_count;
            continue;
        }
        if (!ds.scale.contains(tw.label))
            throw LabelError("label '" + tw.label + "' not on the subtask " +
                                 std::string(subtask_name(subtask)) + " scale",
                             lineno);
        tw.norm_text = normalize_tweet(tw.raw_text);
        ds.examples.push_back(std::move(tw));
    }
    if (in.bad()) throw IoError("read failure on " + path);
    return ds;
}

// Writes the same layout back out (raw text, LF endings). Reloading the
// result reproduces the dataset field for field.
inline void save_dataset(const Dataset& ds, const std::string& path, bool normalized = false) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const bool has_topic = ds.subtask != Subtask::A;
    for (const auto& tw : ds.examples) {
        out << tw.id << '\t';
        if (has_topic) out << tw.topic << '\t';
        out << tw.label << '\t' << (normalized ? tw.norm_text : tw.raw_text) << '\n';
    }
    if (!out) throw IoError("write failure on " + path);
}

// ---------------------------------------------------------------------------
// Splits and summaries
// ---------------------------------------------------------------------------

inline std::map<std::string, long> class_distribution(const Dataset& ds) {
    std::map<std::string, long> counts;
    for (const auto& l : ds.scale.labels) counts[l] = 0;
    for (const auto& tw : ds.examples) ++counts[tw.label];
    return counts;
}

// Deterministic per-class split. The first part receives round(fraction * n)
// of each class, clamped so both parts keep at least one example per class
// (hence the >= 2 per class precondition).
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double fraction,
                                                    std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("split fraction must be in (0,1)");

    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.examples.size(); ++i)
        by_class[ds.examples[i].label].push_back(i);
    for (const auto& [label, idx] : by_class)
        if (idx.size() < 2)
            throw StratifyError("class '" + label + "' has " + std::to_string(idx.size()) +
                                " example(s); stratified split needs at least 2");

    Rng rng(seed);
    std::vector<bool> in_first(ds.examples.size(), false);
    // classes in scale order so the RNG stream is reproducible
    for (const auto& label : ds.scale.labels) {
        auto it = by_class.find(label);
        if (it == by_class.end()) continue;
        auto idx = it->second;
        rng.shuffle(idx);
        std::size_t take = static_cast<std::size_t>(
            std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
        take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
        for (std::size_t k = 0; k < take; ++k) in_first[idx[k]] = true;
    }

    Dataset first, second;
    first.subtask = second.subtask = ds.subtask;
    first.scale = second.scale = ds.scale;
    first.source_path = second.source_path = ds.source_path;
    for (std::size_t i = 0; i < ds.examples.size(); ++i)
        (in_first[i] ? first : second).examples.push_back(ds.examples[i]);
    return {std::move(first), std::move(second)};
}

}  // namespace sentibench
