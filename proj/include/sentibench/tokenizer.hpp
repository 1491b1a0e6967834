#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sentibench/common.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Subword vocabulary.
//
// Ids 0-4 are the fixed specials. The rest is a character alphabet plus
// deterministic BPE-style merges; non-initial pieces carry the "##" prefix.
// ---------------------------------------------------------------------------

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;

struct Vocab {
    std::vector<std::string> tokens;              // id -> token
    std::unordered_map<std::string, int> id_of;   // token -> id

    Vocab() {
        for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add(t);
    }

    int add(const std::string& tok) {
        auto [it, inserted] = id_of.emplace(tok, static_cast<int>(tokens.size()));
        if (inserted) tokens.push_back(tok);
        return it->second;
    }
    int lookup(const std::string& tok) const {
        auto it = id_of.find(tok);
        return it == id_of.end() ? -1 : it->second;
    }
    const std::string& token(int id) const {
        if (id < 0 || id >= static_cast<int>(tokens.size()))
            throw InputError("token id " + std::to_string(id) + " out of range");
        return tokens[static_cast<std::size_t>(id)];
    }
    int size() const { return static_cast<int>(tokens.size()); }
};

// One token per line, line number = id. Round-trips exactly.
inline void save_vocab(const Vocab& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& t : v.tokens) out << t << '\n';
    if (!out) throw IoError("write failure on " + path);
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocab file: " + path);
    Vocab v;
    v.tokens.clear();
    v.id_of.clear();
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.add(line);
    }
    static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (int i = 0; i < kNumSpecials; ++i)
        if (v.size() <= i || v.tokens[static_cast<std::size_t>(i)] != kSpecials[i])
            throw FormatError("vocab file " + path + " does not start with the special tokens");
    return v;
}

// ---------------------------------------------------------------------------
// Vocabulary construction.
//
// Every character of the corpus is seeded in both word-initial ("c") and
// continuation ("##c") form, then the remaining capacity is filled by
// repeatedly merging the most frequent adjacent symbol pair. Ties go to the
// lexicographically smallest merged token, so the result is deterministic.
// min_freq applies to merges only; character coverage is unconditional.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string merge_symbols(const std::string& left, const std::string& right) {
    return left + (starts_with(right, "##") ? right.substr(2) : right);
}

}  // namespace detail

inline Vocab build_vocab(const std::vector<std::string>& corpus, int max_size, int min_freq = 1) {
    using SymbolPair = std::pair<std::string, std::string>;

    // word frequency over whitespace tokens
    std::map<std::string, long> word_freq;
    for (const auto& text : corpus)
        for (auto& w : split_ws(text)) ++word_freq[w];

    // character alphabet, both positional forms
    std::set<std::string> alphabet;
    for (const auto& [word, n] : word_freq)
        for (auto& c : utf8_chars(word)) {
            alphabet.insert(c);
            alphabet.insert("##" + c);
        }

    if (max_size < kNumSpecials + static_cast<int>(alphabet.size()))
        throw CapacityError("max_size " + std::to_string(max_size) + " cannot hold " +
                            std::to_string(kNumSpecials) + " specials + " +
                            std::to_string(alphabet.size()) + " alphabet tokens");

    Vocab vocab;
    for (const auto& a : alphabet) vocab.add(a);

    // words as symbol sequences: [c0, ##c1, ##c2, ...]
    struct WordPieces {
        std::vector<std::string> symbols;
        long freq;
    };
    std::vector<WordPieces> words;
    words.reserve(word_freq.size());
    for (const auto& [word, n] : word_freq) {
        WordPieces wp;
        wp.freq = n;
        auto chars = utf8_chars(word);
        for (std::size_t i = 0; i < chars.size(); ++i)
            wp.symbols.push_back(i == 0 ? chars[i] : "##" + chars[i]);
        words.push_back(std::move(wp));
    }

    // Incremental pair bookkeeping with a lazy-invalidation heap. The pick
    // order is a total order (highest count, then smallest merged token,
    // then smallest pair), so the merge sequence is deterministic and
    // identical to a full recount per round.
    std::map<SymbolPair, long> pair_count;
    std::map<SymbolPair, std::set<std::size_t>> pair_words;

    struct HeapEntry {
        long count;
        std::string merged;
        SymbolPair pair;
        bool operator<(const HeapEntry& o) const {  // max-heap priority
            if (count != o.count) return count < o.count;
            if (merged != o.merged) return merged > o.merged;
            return pair > o.pair;
        }
    };
    std::priority_queue<HeapEntry> heap;

    // every count change pushes a fresh entry, so the heap always holds one
    // entry matching each pair's current count; older entries go stale
    auto add_word_pairs = [&](std::size_t w, long sign) {
        const auto& syms = words[w].symbols;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            const SymbolPair pr{syms[i], syms[i + 1]};
            long& n = pair_count[pr];
            n += sign * words[w].freq;
            if (sign > 0)
                pair_words[pr].insert(w);
            else
                pair_words[pr].erase(w);
            if (n >= 1) heap.push({n, detail::merge_symbols(pr.first, pr.second), pr});
        }
    };
    for (std::size_t w = 0; w < words.size(); ++w) add_word_pairs(w, +1);

    const long freq_floor = std::max<long>(1, min_freq);
    while (vocab.size() < max_size && !heap.empty()) {
        const HeapEntry top = heap.top();
        heap.pop();
        auto it = pair_count.find(top.pair);
        if (it == pair_count.end() || it->second != top.count) continue;  // stale
        if (top.count < freq_floor) break;

        const auto affected = pair_words[top.pair];  // copy; mutation follows
        for (std::size_t w : affected) {
            add_word_pairs(w, -1);
            auto& syms = words[w].symbols;
            std::vector<std::string> out;
            out.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == top.pair.first &&
                    syms[i + 1] == top.pair.second) {
                    out.push_back(top.merged);
                    ++i;
                } else {
                    out.push_back(syms[i]);
                }
            }
            syms = std::move(out);
            add_word_pairs(w, +1);
        }
        pair_count.erase(top.pair);
        pair_words.erase(top.pair);
        // the same surface form can arise from two different merges; only
        // the first one occupies a vocab slot
        vocab.add(top.merged);
    }
    return vocab;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

struct TokenSequence {
    std::vector<int> ids;
    std::vector<int> segment_ids;      // 0 = first segment, 1 = second
    std::vector<int> attention_mask;   // 1 = real token, 0 = padding
    std::vector<int> special_positions;  // sorted indices of [CLS]/[SEP]

    std::size_t length() const { return ids.size(); }
    bool is_special(std::size_t pos) const {
        return std::binary_search(special_positions.begin(), special_positions.end(),
                                  static_cast<int>(pos));
    }
    bool operator==(const TokenSequence& o) const {
        return ids == o.ids && segment_ids == o.segment_ids &&
               attention_mask == o.attention_mask && special_positions == o.special_positions;
    }
};

// Greedy longest-match segmentation of one whitespace-delimited word.
// A word with an unmatchable residue collapses to a single [UNK].
inline std::vector<int> segment_word(const Vocab& vocab, const std::string& word) {
    const auto chars = utf8_chars(word);
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < chars.size()) {
        int match = -1;
        std::size_t match_len = 0;
        std::string candidate;
        for (std::size_t len = chars.size() - pos; len >= 1; --len) {
            candidate.clear();
            if (pos > 0) candidate = "##";
            for (std::size_t k = 0; k < len; ++k) candidate += chars[pos + k];
            const int id = vocab.lookup(candidate);
            if (id >= 0) {
                match = id;
                match_len = len;
                break;
            }
        }
        if (match < 0) return {kUnkId};
        ids.push_back(match);
        pos += match_len;
    }
    return ids;
}

// Packs text (and an optional paired segment) as
//   [CLS] text [SEP]            segment ids 0
//   [CLS] text [SEP] pair [SEP] segment ids 0...0 1...1
// then truncates the longer segment first (ties truncate the pair) until the
// packed length fits max_len, and right-pads with [PAD].
inline TokenSequence encode(const Vocab& vocab, const std::string& text,
                            const std::string& pair = "", int max_len = 64) {
    if (max_len < 4) throw ConfigError("encode requires max_len >= 4");

    auto tokenize = [&vocab](const std::string& s) {
        std::vector<int> out;
        for (const auto& w : split_ws(s)) {
            auto ids = segment_word(vocab, w);
            out.insert(out.end(), ids.begin(), ids.end());
        }
        return out;
    };
    std::vector<int> a = tokenize(text);
    std::vector<int> b = tokenize(pair);
    const bool paired = !pair.empty();

    const std::size_t budget = static_cast<std::size_t>(max_len) - (paired ? 3 : 2);
    while (a.size() + (paired ? b.size() : 0) > budget) {
        if (paired && b.size() >= a.size() && !b.empty())
            b.pop_back();
        else
            a.pop_back();
    }

    TokenSequence seq;
    seq.ids.reserve(static_cast<std::size_t>(max_len));
    seq.special_positions.push_back(0);
    seq.ids.push_back(kClsId);
    seq.segment_ids.push_back(0);
    for (int id : a) {
        seq.ids.push_back(id);
        seq.segment_ids.push_back(0);
    }
    seq.special_positions.push_back(static_cast<int>(seq.ids.size()));
    seq.ids.push_back(kSepId);
    seq.segment_ids.push_back(0);
    if (paired) {
        for (int id : b) {
            seq.ids.push_back(id);
            seq.segment_ids.push_back(1);
        }
        seq.special_positions.push_back(static_cast<int>(seq.ids.size()));
        seq.ids.push_back(kSepId);
        seq.segment_ids.push_back(1);
    }
    seq.attention_mask.assign(seq.ids.size(), 1);
    while (seq.ids.size() < static_cast<std::size_t>(max_len)) {
        seq.ids.push_back(kPadId);
        seq.segment_ids.push_back(0);
        seq.attention_mask.push_back(0);
    }
    return seq;
}

// Drops specials, joins ## continuations, space-joins words.
inline std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        const std::string& tok = vocab.token(id);  // throws on out-of-range
        if (id < kNumSpecials) continue;
        if (starts_with(tok, "##")) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += tok;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// MLM masking
// ---------------------------------------------------------------------------

inline constexpr int kNotMasked = -1;

struct MaskedBatch {
    std::vector<TokenSequence> inputs;
    std::vector<std::vector<int>> mlm_labels;  // original id, or kNotMasked

    bool operator==(const MaskedBatch& o) const {
        return inputs == o.inputs && mlm_labels == o.mlm_labels;
    }
};

struct MlmOptions {
    double rate = 0.15;
    std::uint64_t seed = 0;
    // BERT's 80/10/10 replacement scheme ([MASK] / random token / unchanged).
    // Off by default: plain [MASK] replacement at every selected position.
    bool bert_8010 = false;
    int vocab_size = 0;  // required when bert_8010 is set
};

inline MaskedBatch apply_mlm_mask(const std::vector<TokenSequence>& batch,
                                  const MlmOptions& opt) {
    if (!(opt.rate >= 0.0 && opt.rate <= 1.0))
        throw ConfigError("mask rate must be in [0,1]");
    if (opt.bert_8010 && opt.vocab_size <= kNumSpecials)
        throw ConfigError("bert_8010 masking needs the vocabulary size");

    Rng rng(opt.seed);
    MaskedBatch out;
    out.inputs = batch;
    out.mlm_labels.reserve(batch.size());
    for (auto& seq : out.inputs) {
        std::vector<int> labels(seq.length(), kNotMasked);
        for (std::size_t pos = 0; pos < seq.length(); ++pos) {
            if (seq.attention_mask[pos] == 0 || seq.is_special(pos)) continue;
            if (rng.uniform() < opt.rate) {
                labels[pos] = seq.ids[pos];
                if (opt.bert_8010) {
                    const double r = rng.uniform();
                    if (r < 0.8)
                        seq.ids[pos] = kMaskId;
                    else if (r < 0.9)
                        seq.ids[pos] = kNumSpecials +
                                       static_cast<int>(rng.below(static_cast<std::uint64_t>(
                                           opt.vocab_size - kNumSpecials)));
                    // else: keep the original id
                } else {
                    seq.ids[pos] = kMaskId;
                }
            }
        }
        out.mlm_labels.push_back(std::move(labels));
    }
    return out;
}

inline MaskedBatch apply_mlm_mask(const std::vector<TokenSequence>& batch, double rate,
                                  std::uint64_t seed) {
    MlmOptions opt;
    opt.rate = rate;
    opt.seed = seed;
    return apply_mlm_mask(batch, opt);
}

}  // namespace sentibench
