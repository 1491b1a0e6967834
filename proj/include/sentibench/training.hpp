#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "sentibench/corpus.hpp"
#include "sentibench/encoder.hpp"
#include "sentibench/tokenizer.hpp"

namespace sentibench {

// ---------------------------------------------------------------------------
// Training configuration. Adaptive moment estimation with decoupled weight
// decay, linear warmup then linear decay to zero, global gradient-norm
// clipping. No decay on biases or layer-norm parameters.
// ---------------------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 5e-4;
    int batch_size = 16;
    int epochs = 20;
    double weight_decay = 0.01;
    double warmup_fraction = 0.1;
    double max_grad_norm = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (epochs <= 0) throw ConfigError("epochs must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
            throw ConfigError("warmup_fraction must be in [0,1]");
        if (max_grad_norm <= 0.0) throw ConfigError("max_grad_norm must be positive");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"epochs", c.epochs},               {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction}, {"max_grad_norm", c.max_grad_norm},
            {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("warmup_fraction")) c.warmup_fraction = j.at("warmup_fraction").get<double>();
    if (j.contains("max_grad_norm")) c.max_grad_norm = j.at("max_grad_norm").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class AdamW {
public:
    AdamW(EncoderModel& model, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& r : param_refs(model)) {
            m_.push_back(Mat::Zero(r.mat->rows(), r.mat->cols()));
            v_.push_back(Mat::Zero(r.mat->rows(), r.mat->cols()));
        }
    }

    // lr_scale in [0,1] applies the schedule; grads are consumed as-is.
    void step(EncoderModel& model, EncoderModel& grads, double lr_scale) {
        ++t_;
        const double lr = cfg_.learning_rate * lr_scale;
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        auto prefs = param_refs(model);
        auto grefs = param_refs(grads);
        for (std::size_t i = 0; i < prefs.size(); ++i) {
            Mat& p = *prefs[i].mat;
            const Mat& g = *grefs[i].mat;
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.cwiseProduct(g);
            const Mat mhat = m_[i] / bc1;
            const Mat vhat = v_[i] / bc2;
            p -= lr * (mhat.array() / (vhat.array().sqrt() + kEps)).matrix();
            if (prefs[i].decay) p -= lr * cfg_.weight_decay * p;
        }
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
    TrainConfig cfg_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

// Linear warmup to the peak, then linear decay to zero. 1-based step index.
inline double lr_schedule(long step, long total_steps, double warmup_fraction) {
    const long warmup = std::max<long>(1, static_cast<long>(
        std::ceil(warmup_fraction * static_cast<double>(total_steps))));
    if (step <= warmup) return static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return 1.0;
    return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

// Global norm clipping; returns the pre-clip norm.
inline double clip_gradients(EncoderModel& grads, double max_norm) {
    double sq = 0.0;
    auto refs = param_refs(grads);
    for (const auto& r : refs) sq += r.mat->squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& r : refs) *r.mat *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Dataset encoding
// ---------------------------------------------------------------------------

// Tokenizer context for training/prediction: how datasets become batches.
// pair_topic packs the tweet as segment 0 and the topic as segment 1.
struct EncodeContext {
    Vocab vocab;
    int max_len = 64;
    bool pair_topic = true;
};

inline TokenSequence encode_example(const EncodeContext& ctx, const LabeledTweet& tw) {
    const std::string pair = ctx.pair_topic ? normalize_tweet(tw.topic) : std::string();
    return encode(ctx.vocab, tw.norm_text, pair, ctx.max_len);
}

inline std::vector<TokenSequence> encode_dataset(const EncodeContext& ctx, const Dataset& ds) {
    std::vector<TokenSequence> out;
    out.reserve(ds.size());
    for (const auto& tw : ds.examples) out.push_back(encode_example(ctx, tw));
    return out;
}

inline std::vector<int> label_targets(const Dataset& ds) {
    std::vector<int> out;
    out.reserve(ds.size());
    for (const auto& tw : ds.examples) out.push_back(ds.scale.index_of(tw.label));
    return out;
}

// Argmax labels for a dataset, batched.
inline std::vector<std::string> predict_labels(const EncoderModel& model, const EncodeContext& ctx,
                                               const Dataset& ds, int batch_size = 32) {
    std::vector<std::string> out;
    out.reserve(ds.size());
    const auto seqs = encode_dataset(ctx, ds);
    for (std::size_t i = 0; i < seqs.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min<std::size_t>(batch_size, seqs.size() - i);
        std::vector<TokenSequence> batch(seqs.begin() + static_cast<std::ptrdiff_t>(i),
                                         seqs.begin() + static_cast<std::ptrdiff_t>(i + n));
        Mat logits = forward(model, batch);
        for (Eigen::Index b = 0; b < logits.rows(); ++b) {
            Eigen::Index best = 0;
            logits.row(b).maxCoeff(&best);
            out.push_back(ds.scale.labels[static_cast<std::size_t>(best)]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double dev_accuracy = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    EncoderModel model;  // best-dev-accuracy checkpoint
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_dev_accuracy = 0.0;
};

inline TrainResult train_classifier(const EncoderModel& initial, const Dataset& train,
                                    const Dataset& dev, const TrainConfig& tcfg,
                                    const EncodeContext& ctx) {
    tcfg.validate();
    if (train.empty() || dev.empty())
        throw ConfigError("train and dev datasets must be nonempty");
    if (!(train.scale == dev.scale)) throw ConfigError("train/dev label scales differ");
    if (static_cast<int>(train.scale.size()) != initial.config.num_classes)
        throw ConfigError("model has " + std::to_string(initial.config.num_classes) +
                          " classes, dataset scale has " + std::to_string(train.scale.size()));

    EncoderModel model = initial;
    const auto seqs = encode_dataset(ctx, train);
    const auto targets = label_targets(train);

    const long steps_per_epoch =
        (static_cast<long>(seqs.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
    const long total_steps = steps_per_epoch * tcfg.epochs;

    AdamW optimizer(model, tcfg);
    Rng shuffle_rng(tcfg.seed);
    Rng dropout_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
    EncoderModel grads = zeros_like(model);

    TrainResult result;
    result.model = model;
    result.best_dev_accuracy = -1.0;

    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        long seen = 0;
        for (long s = 0; s < steps_per_epoch; ++s) {
            const std::size_t lo = static_cast<std::size_t>(s) * static_cast<std::size_t>(tcfg.batch_size);
            const std::size_t hi = std::min(lo + static_cast<std::size_t>(tcfg.batch_size), seqs.size());
            std::vector<TokenSequence> batch;
            Objective obj;
            for (std::size_t i = lo; i < hi; ++i) {
                batch.push_back(seqs[order[i]]);
                obj.class_targets.push_back(targets[order[i]]);
            }
            for (const auto& r : param_refs(grads)) r.mat->setZero();
            ForwardOptions opts;
            opts.training = true;
            opts.rng = &dropout_rng;
            const LossResult lr = compute_loss(model, batch, obj, &grads, opts);
            if (!std::isfinite(lr.total))
                throw TrainError("loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(s + 1));
            loss_sum += lr.total * static_cast<double>(batch.size());
            seen += static_cast<long>(batch.size());
            clip_gradients(grads, tcfg.max_grad_norm);
            ++step;
            optimizer.step(model, grads, lr_schedule(step, total_steps, tcfg.warmup_fraction));
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(seen);

        const auto train_pred = predict_labels(model, ctx, train);
        long correct = 0;
        for (std::size_t i = 0; i < train_pred.size(); ++i)
            correct += (train_pred[i] == train.examples[i].label);
        st.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());

        const auto dev_pred = predict_labels(model, ctx, dev);
        correct = 0;
        for (std::size_t i = 0; i < dev_pred.size(); ++i)
            correct += (dev_pred[i] == dev.examples[i].label);
        st.dev_accuracy = static_cast<double>(correct) / static_cast<double>(dev.size());

        st.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(st);

        if (st.dev_accuracy > result.best_dev_accuracy) {
            result.best_dev_accuracy = st.dev_accuracy;
            result.best_epoch = epoch;
            result.model = model;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// MLM pretraining, one masked pass per step over a shuffled corpus window.
// ---------------------------------------------------------------------------

struct PretrainResult {
    EncoderModel model;
    std::vector<double> step_losses;
};

inline PretrainResult pretrain_mlm(const EncoderModel& initial,
                                   const std::vector<TokenSequence>& corpus, int steps,
                                   const TrainConfig& tcfg, double mask_rate = 0.15) {
    tcfg.validate();
    if (corpus.empty()) throw ConfigError("pretraining corpus is empty");

    EncoderModel model = initial;
    AdamW optimizer(model, tcfg);
    Rng rng(tcfg.seed);
    EncoderModel grads = zeros_like(model);

    PretrainResult result;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();

    for (int s = 1; s <= steps; ++s) {
        std::vector<TokenSequence> batch;
        for (int i = 0; i < tcfg.batch_size; ++i) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(corpus[order[cursor++]]);
        }
        MlmOptions mopt;
        mopt.rate = mask_rate;
        mopt.seed = rng.next_u64();
        MaskedBatch masked = apply_mlm_mask(batch, mopt);
        long selected = 0;
        for (const auto& row : masked.mlm_labels)
            for (int v : row) selected += (v != kNotMasked);
        if (selected == 0) continue;  // rare at sane rates; skip the step

        Objective obj;
        obj.mlm_labels = masked.mlm_labels;
        for (const auto& r : param_refs(grads)) r.mat->setZero();
        const LossResult lr = compute_loss(model, masked.inputs, obj, &grads);
        if (!std::isfinite(lr.total))
            throw TrainError("MLM loss diverged at step " + std::to_string(s));
        result.step_losses.push_back(lr.mlm_loss);
        clip_gradients(grads, tcfg.max_grad_norm);
        optimizer.step(model, grads, lr_schedule(s, steps, tcfg.warmup_fraction));
    }
    result.model = model;
    return result;
}

// ---------------------------------------------------------------------------
// Gradient verification: analytic gradients vs central finite differences on
// sampled coordinates from every tensor. Relative error where the gradient
// has magnitude, absolute (1e-8) where both sides are below 1e-6.
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double epsilon = 1e-3;
    int coords_per_tensor = 6;
    std::uint64_t seed = 0;
    // Test hook: scales the named tensor's analytic gradient by 2 so the
    // check must fail; empty in normal use.
    std::string mutate_tensor;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;  // over small-gradient coordinates
    long coords_checked = 0;
    std::string worst_tensor;

    bool passed(double rel_tol = 1e-4, double abs_tol = 1e-8) const {
        return max_rel_error < rel_tol && max_abs_error < abs_tol;
    }
};

inline GradCheckResult grad_check(const EncoderModel& model,
                                  const std::vector<TokenSequence>& batch, const Objective& obj,
                                  const GradCheckOptions& opt = {}) {
    EncoderModel work = model;  // perturbed in place, restored after each probe
    EncoderModel grads = zeros_like(work);
    compute_loss(work, batch, obj, &grads);
    if (!opt.mutate_tensor.empty()) {
        bool found = false;
        for (const auto& r : param_refs(grads))
            if (r.name == opt.mutate_tensor) {
                *r.mat *= 2.0;
                found = true;
            }
        if (!found) throw ConfigError("unknown tensor '" + opt.mutate_tensor + "'");
    }

    Rng rng(opt.seed);
    GradCheckResult res;
    auto prefs = param_refs(work);
    auto grefs = param_refs(grads);
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        Mat& p = *prefs[i].mat;
        const Mat& g = *grefs[i].mat;
        const long n = std::min<long>(opt.coords_per_tensor, p.size());
        for (long k = 0; k < n; ++k) {
            const Eigen::Index idx =
                static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.size())));
            const double orig = p.data()[idx];
            p.data()[idx] = orig + opt.epsilon;
            const double f_plus = compute_loss(work, batch, obj).total;
            p.data()[idx] = orig - opt.epsilon;
            const double f_minus = compute_loss(work, batch, obj).total;
            p.data()[idx] = orig;

            const double numeric = (f_plus - f_minus) / (2.0 * opt.epsilon);
            const double analytic = g.data()[idx];
            const double scale = std::max(std::abs(numeric), std::abs(analytic));
            const double diff = std::abs(numeric - analytic);
            ++res.coords_checked;
            if (scale < 1e-6) {
                if (diff > res.max_abs_error) {
                    res.max_abs_error = diff;
                    if (diff >= 1e-8) res.worst_tensor = prefs[i].name;
                }
            } else if (diff / scale > res.max_rel_error) {
                res.max_rel_error = diff / scale;
                res.worst_tensor = prefs[i].name;
            }
        }
    }
    return res;
}

}  // namespace sentibench
