#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sentibench/corpus.hpp"
#include "sentibench/encoder.hpp"
#include "sentibench/fixtures.hpp"
#include "sentibench/metrics.hpp"
#include "sentibench/nb.hpp"
#include "sentibench/tokenizer.hpp"
#include "sentibench/training.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Property suite behind `selftest`: each check recomputes its expectation
// with an independent oracle (brute-force tallies, direct formula
// evaluation, finite differences) and compares the library against it.
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

namespace selfcheck {

// --- independent metric oracle -------------------------------------------

struct OracleMetrics {
    double accuracy;
    std::map<std::string, double> precision, recall, f1;
    double macro_p, macro_r, macro_f1;
};

// Straight from the formulas, counting pairs directly (no confusion matrix).
inline OracleMetrics oracle_metrics(const std::vector<std::string>& gold,
                                    const std::vector<std::string>& pred,
                                    const std::vector<std::string>& labels) {
    OracleMetrics om{};
    long correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) correct += (gold[i] == pred[i]);
    om.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
    for (const auto& c : labels) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            if (gold[i] == c && pred[i] == c) ++tp;
            if (gold[i] != c && pred[i] == c) ++fp;
            if (gold[i] == c && pred[i] != c) ++fn;
        }
        const double p = (tp + fp) == 0 ? 0.0 : double(tp) / double(tp + fp);
        const double r = (tp + fn) == 0 ? 0.0 : double(tp) / double(tp + fn);
        const double f = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
        om.precision[c] = p;
        om.recall[c] = r;
        om.f1[c] = f;
        om.macro_p += p / static_cast<double>(labels.size());
        om.macro_r += r / static_cast<double>(labels.size());
        om.macro_f1 += f / static_cast<double>(labels.size());
    }
    return om;
}

inline CheckResult check_metrics_oracle(std::uint64_t seed) {
    CheckResult res{"metrics_oracle", true, "", 0.0};
    Rng rng(seed);
    double worst = 0.0;
    for (const auto& scale : {SentimentScale::two_point(), SentimentScale::three_point(),
                              SentimentScale::five_point()}) {
        std::vector<std::string> gold, pred;
        for (int i = 0; i < 10000; ++i) {
            gold.push_back(scale.labels[static_cast<std::size_t>(rng.below(scale.size()))]);
            pred.push_back(scale.labels[static_cast<std::size_t>(rng.below(scale.size()))]);
        }
        const auto rep = compute_metrics(confusion(gold, pred, scale));
        const auto om = oracle_metrics(gold, pred, scale.labels);
        worst = std::max(worst, std::abs(rep.accuracy - om.accuracy));
        worst = std::max(worst, std::abs(rep.macro.precision - om.macro_p));
        worst = std::max(worst, std::abs(rep.macro.recall - om.macro_r));
        worst = std::max(worst, std::abs(rep.macro.f1 - om.macro_f1));
        for (const auto& c : scale.labels) {
            worst = std::max(worst, std::abs(rep.per_class.at(c).precision - om.precision.at(c)));
            worst = std::max(worst, std::abs(rep.per_class.at(c).recall - om.recall.at(c)));
            worst = std::max(worst, std::abs(rep.per_class.at(c).f1 - om.f1.at(c)));
        }
    }
    res.pass = worst <= 1e-12;
    std::ostringstream os;
    os << "max |impl - oracle| = " << worst;
    res.detail = os.str();
    return res;
}

// --- Naive Bayes worked example -------------------------------------------

inline CheckResult check_nb_example() {
    CheckResult res{"nb_worked_example", true, "", 0.0};
    Dataset ds;
    ds.subtask = Subtask::B;
    ds.scale = {ScaleKind::two_point, {"c", "j"}};
    auto add = [&ds](const std::string& label, const std::string& text) {
        LabeledTweet tw;
        tw.id = std::to_string(ds.examples.size());
        tw.topic = "t";
        tw.label = label;
        tw.raw_text = text;
        tw.norm_text = normalize_tweet(text);
        ds.examples.push_back(tw);
    };
    add("c", "chinese beijing chinese");
    add("c", "chinese chinese shanghai");
    add("c", "chinese macao");
    add("j", "tokyo japan chinese");

    const NBModel model = train_nb(ds, 1.0);
    const std::string test_doc = "chinese chinese chinese tokyo japan";
    const auto [label, scores] = predict_nb(model, test_doc);

    // brute-force oracle: recount everything and apply the smoothing formula
    std::map<std::string, std::map<std::string, long>> counts;
    std::map<std::string, long> totals, docs;
    std::set<std::string> vocab;
    for (const auto& tw : ds.examples) {
        ++docs[tw.label];
        for (const auto& w : split_ws(tw.norm_text)) {
            ++counts[tw.label][w];
            ++totals[tw.label];
            vocab.insert(w);
        }
    }
    const double v1 = static_cast<double>(vocab.size()) + 1.0;
    double worst = 0.0;
    std::map<std::string, double> oracle_scores;
    for (const auto& c : {std::string("c"), std::string("j")}) {
        double s = std::log(static_cast<double>(docs[c]) / 4.0);
        for (const auto& w : split_ws(test_doc)) {
            long cw = counts[c].count(w) ? counts[c][w] : 0;
            const bool known = vocab.count(w) > 0;
            const double num = known ? static_cast<double>(cw) + 1.0 : 1.0;
            s += std::log(num / (static_cast<double>(totals[c]) + v1));
        }
        oracle_scores[c] = s;
        worst = std::max(worst, std::abs(scores.at(c) - s));
    }
    // the hand number: P(chinese|c) = (5+1)/(8+7) = 6/15
    const double like = std::exp(model.log_likelihood.at("c").at("chinese"));
    worst = std::max(worst, std::abs(like - 6.0 / 15.0));
    const double prior = std::exp(model.log_prior.at("c"));
    worst = std::max(worst, std::abs(prior - 0.75));

    res.pass = label == "c" && worst <= 1e-9 && oracle_scores["c"] > oracle_scores["j"];
    std::ostringstream os;
    os << "predicted " << label << ", max |impl - oracle| = " << worst;
    res.detail = os.str();
    return res;
}

// --- MLM masking statistics ------------------------------------------------

inline CheckResult check_masking_statistics(std::uint64_t seed) {
    CheckResult res{"masking_statistics", true, "", 0.0};
    // 162 sequences x 62 eligible positions = 10044 eligible
    Vocab v = build_vocab({"a b c d e f g h"}, 64);
    std::vector<TokenSequence> batch;
    std::string text;
    for (int i = 0; i < 62; ++i) text += "a ";
    for (int i = 0; i < 162; ++i) batch.push_back(encode(v, text, "", 64));

    long eligible = 0;
    for (const auto& s : batch)
        for (std::size_t p = 0; p < s.length(); ++p)
            eligible += (s.attention_mask[p] == 1 && !s.is_special(p));

    double sum_frac = 0.0, lo = 1.0, hi = 0.0;
    bool touched_forbidden = false;
    const int n_seeds = 100;
    for (int k = 0; k < n_seeds; ++k) {
        const MaskedBatch mb = apply_mlm_mask(batch, 0.15, seed + static_cast<std::uint64_t>(k));
        long selected = 0;
        for (std::size_t i = 0; i < mb.inputs.size(); ++i)
            for (std::size_t p = 0; p < mb.inputs[i].length(); ++p) {
                if (mb.mlm_labels[i][p] == kNotMasked) continue;
                ++selected;
                if (batch[i].attention_mask[p] == 0 || batch[i].is_special(p))
                    touched_forbidden = true;
            }
        const double frac = static_cast<double>(selected) / static_cast<double>(eligible);
        sum_frac += frac;
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
    }
    const double mean = sum_frac / n_seeds;
    res.pass = !touched_forbidden && lo >= 0.13 && hi <= 0.17 && mean >= 0.145 && mean <= 0.155;
    std::ostringstream os;
    os << eligible << " eligible, fraction range [" << lo << ", " << hi << "], mean " << mean
       << (touched_forbidden ? ", FORBIDDEN POSITION MASKED" : "");
    res.detail = os.str();
    return res;
}

// --- attention / layer norm ------------------------------------------------

inline CheckResult check_attention_properties(std::uint64_t seed) {
    CheckResult res{"attention_properties", true, "", 0.0};
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Mat q(4, 8), k(4, 8), v(4, 8);
        for (auto* m : {&q, &k, &v})
            for (Eigen::Index c = 0; c < m->cols(); ++c)
                for (Eigen::Index r = 0; r < m->rows(); ++r) (*m)(r, c) = rng.normal();
        std::vector<int> mask = {1, 1, 1, 1};
        mask[rng.below(4)] = 0;  // keep >= 3 unmasked
        const auto att = self_attention(q, k, v, mask);

        // independent softmax oracle over the same scores
        const double scale = 1.0 / std::sqrt(8.0);
        for (Eigen::Index r = 0; r < 4; ++r) {
            double row_sum = 0.0;
            std::vector<double> expo(4, 0.0);
            double mx = -1e300;
            for (Eigen::Index c = 0; c < 4; ++c)
                if (mask[static_cast<std::size_t>(c)])
                    mx = std::max(mx, q.row(r).dot(k.row(c)) * scale);
            double z = 0.0;
            for (Eigen::Index c = 0; c < 4; ++c)
                if (mask[static_cast<std::size_t>(c)]) {
                    expo[static_cast<std::size_t>(c)] =
                        std::exp(q.row(r).dot(k.row(c)) * scale - mx);
                    z += expo[static_cast<std::size_t>(c)];
                }
            for (Eigen::Index c = 0; c < 4; ++c) {
                const double expect = expo[static_cast<std::size_t>(c)] / z;
                worst = std::max(worst, std::abs(att.weights(r, c) - expect));
                row_sum += att.weights(r, c);
            }
            worst = std::max(worst, std::abs(row_sum - 1.0));
        }
    }
    res.pass = worst <= 1e-12;
    std::ostringstream os;
    os << "max deviation from softmax oracle = " << worst;
    res.detail = os.str();
    return res;
}

inline CheckResult check_layer_norm_moments(std::uint64_t seed) {
    CheckResult res{"layer_norm_moments", true, "", 0.0};
    Rng rng(seed);
    Mat x(32, 64);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, c) = 3.0 * rng.normal() + 0.5;
    LayerNormCache cache;
    const Mat g = Mat::Ones(1, 64), b = Mat::Zero(1, 64);
    layer_norm(x, g, b, &cache);
    double worst = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = cache.xhat.row(r).mean();
        const double var = (cache.xhat.row(r).array() - mu).square().mean();
        worst = std::max(worst, std::abs(mu));
        worst = std::max(worst, std::abs(var - 1.0));
    }
    res.pass = worst <= 1e-9;
    std::ostringstream os;
    os << "max |moment error| = " << worst;
    res.detail = os.str();
    return res;
}

// --- normalization / encoding properties -----------------------------------

inline std::string random_raw_text(Rng& rng) {
    static const std::vector<std::string> pieces = {
        "hello",  "WORLD",  "@user1", "@J_ohn", "&amp;",   "&AMP;",  "&lt;ok&gt;",
        "http://t.co/x1", "https://a.b/c", "www.site.org", "so",     "COOL",  "...",
        "#tag",   "a@b",    "  ",     "\t",     "100%",    "idea",   "&quot;q&quot;"};
    std::string s;
    const int n = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i) {
        s += pieces[static_cast<std::size_t>(rng.below(pieces.size()))];
        if (rng.below(4) != 0) s += ' ';
    }
    return s;
}

inline CheckResult check_normalization(std::uint64_t seed) {
    CheckResult res{"normalization_idempotent", true, "", 0.0};
    Rng rng(seed);
    for (int i = 0; i < 2000 && res.pass; ++i) {
        const std::string raw = random_raw_text(rng);
        const std::string once = normalize_tweet(raw);
        if (normalize_tweet(once) != once) {
            res.pass = false;
            res.detail = "not idempotent on: " + raw;
        }
        for (std::size_t p = 0; p + 1 < once.size(); ++p)
            if (once[p] == '@' && detail::is_word_char(once[p + 1])) {
                res.pass = false;
                res.detail = "raw mention survived in: " + once;
            }
        for (const char* prefix : {"http://", "https://", "www."})
            if (once.find(prefix) != std::string::npos) {
                res.pass = false;
                res.detail = "raw URL prefix survived in: " + once;
            }
    }
    if (res.pass) res.detail = "2000 random strings";
    return res;
}

inline CheckResult check_encode_invariants(std::uint64_t seed) {
    CheckResult res{"encode_invariants", true, "", 0.0};
    Rng rng(seed);
    const Vocab v = build_vocab({"the quick brown fox jumps over lazy dog again", "topic words"},
                                200, 1);
    for (int i = 0; i < 500 && res.pass; ++i) {
        const std::string text = normalize_tweet(random_raw_text(rng));
        const std::string pair = (rng.below(2) != 0) ? "topic words" : "";
        const int max_len = 8 + static_cast<int>(rng.below(40));
        const TokenSequence s = encode(v, text, pair, max_len);
        std::string why;
        if (s.ids.size() != static_cast<std::size_t>(max_len)) why = "length != max_len";
        if (s.ids[0] != kClsId) why = "first token is not [CLS]";
        int seps0 = 0, seps1 = 0;
        for (std::size_t p = 0; p < s.length(); ++p) {
            if (s.ids[p] == kSepId) (s.segment_ids[p] == 0 ? seps0 : seps1)++;
            if (s.ids[p] == kPadId && s.attention_mask[p] != 0) why = "[PAD] with mask 1";
            if (s.attention_mask[p] == 0 && s.ids[p] != kPadId) why = "padding is not [PAD]";
        }
        if (seps0 != 1) why = "segment 0 must contain exactly one [SEP]";
        if (!pair.empty() && seps1 != 1) why = "segment 1 must contain exactly one [SEP]";
        if (pair.empty() && seps1 != 0) why = "unsolicited second segment";
        if (!why.empty()) {
            res.pass = false;
            res.detail = why + " for text: " + text;
        }
    }
    if (res.pass) res.detail = "500 random encodings";
    return res;
}

inline CheckResult check_forward_determinism(std::uint64_t seed) {
    CheckResult res{"forward_determinism", true, "", 0.0};
    EncoderConfig cfg;
    cfg.vocab_size = 50;
    cfg.max_len = 16;
    cfg.seed = seed;
    const Vocab v = build_vocab({"alpha beta gamma delta"}, 50);
    std::vector<TokenSequence> batch = {encode(v, "alpha beta", "", 16),
                                        encode(v, "gamma delta alpha", "", 16)};
    const Mat a = forward(init_model(cfg), batch);
    const Mat b = forward(init_model(cfg), batch);
    res.pass = (a - b).cwiseAbs().maxCoeff() == 0.0;
    res.detail = res.pass ? "bitwise equal logits from identical seeds" : "logits differ";
    return res;
}

// --- training-based checks (skipped by --quick) -----------------------------

inline CheckResult check_grad_check(std::uint64_t seed, const std::string& mutate_tensor) {
    CheckResult res{"grad_check", true, "", 0.0};
    EncoderConfig cfg;  // desk scale
    cfg.vocab_size = 60;
    cfg.max_len = 16;
    cfg.num_classes = 3;
    cfg.dropout_rate = 0.0;
    cfg.seed = seed;
    const Vocab v = build_vocab({"red green blue cyan pink onyx gray teal"}, 60);
    std::vector<TokenSequence> batch;
    for (const char* t : {"red green blue", "cyan pink", "onyx gray teal red", "blue blue"})
        batch.push_back(encode(v, t, "", 16));
    MlmOptions mopt;
    mopt.rate = 0.3;
    mopt.seed = seed;
    const MaskedBatch masked = apply_mlm_mask(batch, mopt);
    Objective obj;
    obj.class_targets = {0, 1, 2, 1};
    obj.mlm_labels = masked.mlm_labels;

    GradCheckOptions gopt;
    gopt.seed = seed;
    gopt.mutate_tensor = mutate_tensor;
    const auto gc = grad_check(init_model(cfg), masked.inputs, obj, gopt);
    res.pass = gc.passed();
    std::ostringstream os;
    os << gc.coords_checked << " coords, max rel err " << gc.max_rel_error << ", max abs err "
       << gc.max_abs_error;
    if (!gc.worst_tensor.empty()) os << " (worst: " << gc.worst_tensor << ")";
    res.detail = os.str();
    return res;
}

inline CheckResult check_mlm_pretraining(std::uint64_t seed) {
    CheckResult res{"mlm_pretraining_loss_decreases", true, "", 0.0};
    FixtureOptions fopt;
    fopt.subtask = Subtask::A;
    fopt.count = 200;
    fopt.seed = seed;
    const Dataset ds = make_fixture(fopt);
    std::vector<std::string> corpus;
    for (const auto& tw : ds.examples) corpus.push_back(tw.norm_text);
    const Vocab v = build_vocab(corpus, 600);
    std::vector<TokenSequence> seqs;
    for (const auto& text : corpus) seqs.push_back(encode(v, text, "", 24));

    EncoderConfig cfg;
    cfg.vocab_size = v.size();
    cfg.max_len = 24;
    cfg.dropout_rate = 0.0;
    cfg.seed = seed;
    TrainConfig tcfg;
    tcfg.learning_rate = 1e-3;
    tcfg.seed = seed;
    const auto pr = pretrain_mlm(init_model(cfg), seqs, 50, tcfg);
    const auto& losses = pr.step_losses;
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) head += losses[static_cast<std::size_t>(i)] / 5.0;
    for (std::size_t i = losses.size() - 5; i < losses.size(); ++i) tail += losses[i] / 5.0;
    res.pass = losses.size() >= 45 && tail < head;
    std::ostringstream os;
    os << "mean loss, first 5 steps " << head << " -> last 5 steps " << tail;
    res.detail = os.str();
    return res;
}

inline CheckResult check_overfit_tiny(std::uint64_t seed) {
    CheckResult res{"overfit_tiny_training", true, "", 0.0};
    FixtureOptions fopt;
    fopt.subtask = Subtask::A;
    fopt.count = 32;
    fopt.seed = seed;
    const Dataset train = make_fixture(fopt);

    std::vector<std::string> corpus;
    for (const auto& tw : train.examples) corpus.push_back(tw.norm_text);
    EncodeContext ctx;
    ctx.vocab = build_vocab(corpus, 500);
    ctx.max_len = 24;
    ctx.pair_topic = false;

    EncoderConfig cfg;
    cfg.vocab_size = ctx.vocab.size();
    cfg.max_len = 24;
    cfg.num_classes = 3;
    cfg.dropout_rate = 0.0;
    cfg.seed = seed;
    TrainConfig tcfg;
    tcfg.epochs = 200;
    tcfg.seed = seed;
    const auto tr = train_classifier(init_model(cfg), train, train, tcfg, ctx);
    double best = 0.0;
    int at = -1;
    for (const auto& st : tr.history)
        if (st.train_accuracy > best) {
            best = st.train_accuracy;
            at = st.epoch;
        }
    res.pass = best >= 1.0;
    std::ostringstream os;
    os << "train accuracy " << best << (at > 0 ? " (first full fit at epoch " + std::to_string(at) + ")" : "");
    res.detail = os.str();
    return res;
}

}  // namespace selfcheck

// quick=true skips the training-based checks. A non-empty mutate_tensor
// forces grad_check to run with the mutated analytic gradient (it must fail).
inline std::vector<CheckResult> run_selftest(bool quick, std::uint64_t seed,
                                             const std::string& mutate_tensor = "") {
    using namespace selfcheck;
    std::vector<std::function<CheckResult()>> checks = {
        [seed] { return check_metrics_oracle(seed); },
        [] { return check_nb_example(); },
        [seed] { return check_masking_statistics(seed); },
        [seed] { return check_attention_properties(seed); },
        [seed] { return check_layer_norm_moments(seed); },
        [seed] { return check_normalization(seed); },
        [seed] { return check_encode_invariants(seed); },
        [seed] { return check_forward_determinism(seed); },
    };
    if (!quick || !mutate_tensor.empty())
        checks.push_back([seed, mutate_tensor] { return check_grad_check(seed, mutate_tensor); });
    if (!quick) {
        checks.push_back([seed] { return check_mlm_pretraining(seed); });
        checks.push_back([seed] { return check_overfit_tiny(seed); });
    }

    std::vector<CheckResult> out;
    for (auto& fn : checks) {
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r = fn();
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace sentibench
