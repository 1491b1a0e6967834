#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sentibench/common.hpp"
#include "sentibench/tokenizer.hpp"

namespace sentibench {

using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Configuration.
//
// The reference full-scale shapes (12x768x12 heads, 24x1024x16) are valid
// configs; tests run the desk default 2x64x4.
// ---------------------------------------------------------------------------

struct EncoderConfig {
    int num_layers = 2;
    int hidden_size = 64;
    int num_heads = 4;
    int ffn_size = 128;
    int vocab_size = 1000;
    int max_len = 64;
    int num_classes = 3;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    int head_dim() const { return hidden_size / num_heads; }

    void validate() const {
        if (num_layers <= 0 || hidden_size <= 0 || num_heads <= 0 || ffn_size <= 0 ||
            vocab_size <= 0 || max_len <= 0 || num_classes <= 0)
            throw ConfigError("encoder config fields must all be positive");
        if (hidden_size % num_heads != 0)
            throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                              " is not divisible by num_heads " + std::to_string(num_heads));
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("dropout_rate must be in [0,1)");
        if (vocab_size <= kNumSpecials)
            throw ConfigError("vocab_size must exceed the special-token count");
    }

    bool same_shapes(const EncoderConfig& o) const {
        return num_layers == o.num_layers && hidden_size == o.hidden_size &&
               num_heads == o.num_heads && ffn_size == o.ffn_size && vocab_size == o.vocab_size &&
               max_len == o.max_len && num_classes == o.num_classes;
    }
};

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
    return {{"num_layers", c.num_layers},   {"hidden_size", c.hidden_size},
            {"num_heads", c.num_heads},     {"ffn_size", c.ffn_size},
            {"vocab_size", c.vocab_size},   {"max_len", c.max_len},
            {"num_classes", c.num_classes}, {"dropout_rate", c.dropout_rate},
            {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_size = j.at("ffn_size").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    if (j.contains("dropout_rate")) c.dropout_rate = j.at("dropout_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// Shape arithmetic only; must agree with the allocated tensor sizes.
inline std::int64_t encoder_param_count(const EncoderConfig& c) {
    const std::int64_t V = c.vocab_size, H = c.hidden_size, F = c.ffn_size, T = c.max_len,
                       C = c.num_classes, L = c.num_layers;
    std::int64_t n = 0;
    n += V * H + T * H + 2 * H;  // token / position / segment embeddings
    n += 2 * H;                  // embedding layer norm
    n += L * (4 * H * H          // Wq Wk Wv Wo
              + 2 * H            // attention layer norm
              + H * F + F        // FFN W1 b1
              + F * H + H        // FFN W2 b2
              + 2 * H);          // FFN layer norm
    n += H * H + H;              // pooler
    n += H * C + C;              // classifier
    n += H * H + H + 2 * H + V;  // MLM transform + layer norm + vocab bias (output tied)
    return n;
}

// ---------------------------------------------------------------------------
// Weights. The MLM output projection is tied to the token embedding table.
// ---------------------------------------------------------------------------

struct LayerWeights {
    Mat wq, wk, wv, wo;            // H x H
    Mat attn_ln_gamma, attn_ln_beta;  // 1 x H
    Mat ffn_w1, ffn_b1;            // H x F, 1 x F
    Mat ffn_w2, ffn_b2;            // F x H, 1 x H
    Mat ffn_ln_gamma, ffn_ln_beta;
};

struct EncoderModel {
    EncoderConfig config;
    Mat tok_emb;  // V x H
    Mat pos_emb;  // T x H
    Mat seg_emb;  // 2 x H
    Mat emb_ln_gamma, emb_ln_beta;
    std::vector<LayerWeights> layers;
    Mat pooler_w, pooler_b;  // H x H, 1 x H
    Mat cls_w, cls_b;        // H x C, 1 x C
    Mat mlm_w, mlm_b;        // H x H, 1 x H
    Mat mlm_ln_gamma, mlm_ln_beta;
    Mat mlm_out_bias;  // 1 x V

    std::int64_t num_parameters() const;
};

struct ParamRef {
    std::string name;
    Mat* mat;
    bool decay;  // weight decay applies (matrices, not biases or layer norms)
};

inline std::vector<ParamRef> param_refs(EncoderModel& m) {
    std::vector<ParamRef> refs;
    refs.push_back({"tok_emb", &m.tok_emb, true});
    refs.push_back({"pos_emb", &m.pos_emb, true});
    refs.push_back({"seg_emb", &m.seg_emb, true});
    refs.push_back({"emb_ln_gamma", &m.emb_ln_gamma, false});
    refs.push_back({"emb_ln_beta", &m.emb_ln_beta, false});
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerWeights& w = m.layers[l];
        refs.push_back({p + "wq", &w.wq, true});
        refs.push_back({p + "wk", &w.wk, true});
        refs.push_back({p + "wv", &w.wv, true});
        refs.push_back({p + "wo", &w.wo, true});
        refs.push_back({p + "attn_ln_gamma", &w.attn_ln_gamma, false});
        refs.push_back({p + "attn_ln_beta", &w.attn_ln_beta, false});
        refs.push_back({p + "ffn_w1", &w.ffn_w1, true});
        refs.push_back({p + "ffn_b1", &w.ffn_b1, false});
        refs.push_back({p + "ffn_w2", &w.ffn_w2, true});
        refs.push_back({p + "ffn_b2", &w.ffn_b2, false});
        refs.push_back({p + "ffn_ln_gamma", &w.ffn_ln_gamma, false});
        refs.push_back({p + "ffn_ln_beta", &w.ffn_ln_beta, false});
    }
    refs.push_back({"pooler_w", &m.pooler_w, true});
    refs.push_back({"pooler_b", &m.pooler_b, false});
    refs.push_back({"cls_w", &m.cls_w, true});
    refs.push_back({"cls_b", &m.cls_b, false});
    refs.push_back({"mlm_w", &m.mlm_w, true});
    refs.push_back({"mlm_b", &m.mlm_b, false});
    refs.push_back({"mlm_ln_gamma", &m.mlm_ln_gamma, false});
    refs.push_back({"mlm_ln_beta", &m.mlm_ln_beta, false});
    refs.push_back({"mlm_out_bias", &m.mlm_out_bias, false});
    return refs;
}

inline std::int64_t EncoderModel::num_parameters() const {
    std::int64_t n = 0;
    auto& self = const_cast<EncoderModel&>(*this);
    for (const auto& r : param_refs(self)) n += r.mat->size();
    return n;
}

// Weights from N(0, 0.02^2), layer norms at identity, deterministic in seed.
inline EncoderModel init_model(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderModel m;
    m.config = cfg;
    const int H = cfg.hidden_size, F = cfg.ffn_size, V = cfg.vocab_size, T = cfg.max_len,
              C = cfg.num_classes;

    m.tok_emb.resize(V, H);
    m.pos_emb.resize(T, H);
    m.seg_emb.resize(2, H);
    m.emb_ln_gamma = Mat::Ones(1, H);
    m.emb_ln_beta = Mat::Zero(1, H);
    m.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto& w : m.layers) {
        w.wq.resize(H, H);
        w.wk.resize(H, H);
        w.wv.resize(H, H);
        w.wo.resize(H, H);
        w.attn_ln_gamma = Mat::Ones(1, H);
        w.attn_ln_beta = Mat::Zero(1, H);
        w.ffn_w1.resize(H, F);
        w.ffn_b1 = Mat::Zero(1, F);
        w.ffn_w2.resize(F, H);
        w.ffn_b2 = Mat::Zero(1, H);
        w.ffn_ln_gamma = Mat::Ones(1, H);
        w.ffn_ln_beta = Mat::Zero(1, H);
    }
    m.pooler_w.resize(H, H);
    m.pooler_b = Mat::Zero(1, H);
    m.cls_w.resize(H, C);
    m.cls_b = Mat::Zero(1, C);
    m.mlm_w.resize(H, H);
    m.mlm_b = Mat::Zero(1, H);
    m.mlm_ln_gamma = Mat::Ones(1, H);
    m.mlm_ln_beta = Mat::Zero(1, H);
    m.mlm_out_bias = Mat::Zero(1, V);

    Rng rng(cfg.seed);
    auto fill_normal = [&rng](Mat& mat) {
        for (Eigen::Index c = 0; c < mat.cols(); ++c)
            for (Eigen::Index r = 0; r < mat.rows(); ++r) mat(r, c) = 0.02 * rng.normal();
    };
    for (const auto& ref : param_refs(m)) {
        // only the projection matrices and embeddings are random
        if (ref.decay) fill_normal(*ref.mat);
    }
    return m;
}

inline EncoderModel zeros_like(const EncoderModel& m) {
    EncoderModel z = m;
    for (const auto& ref : param_refs(z)) ref.mat->setZero();
    return z;
}

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

inline double gelu_grad_scalar(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double pdf = std::exp(-0.5 * x * x) / 2.50662827463100050242;
    return cdf + x * pdf;
}

inline Mat gelu(const Mat& x) { return x.unaryExpr([](double v) { return gelu_scalar(v); }); }

inline constexpr double kLayerNormEps = 1e-12;

struct LayerNormCache {
    Mat xhat;                 // normalized rows, pre scale/shift
    Eigen::VectorXd inv_std;  // per row
};

inline Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache) {
    const Eigen::Index n = x.cols();
    Mat out(x.rows(), n);
    if (cache) {
        cache->xhat.resize(x.rows(), n);
        cache->inv_std.resize(x.rows());
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        Eigen::RowVectorXd xhat = (x.row(r).array() - mu) * inv;
        out.row(r) = xhat.cwiseProduct(gamma.row(0)) + beta.row(0);
        if (cache) {
            cache->xhat.row(r) = xhat;
            cache->inv_std(r) = inv;
        }
    }
    return out;
}

// dX for a layer norm row: inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
inline Mat layer_norm_backward(const Mat& dout, const Mat& gamma, const LayerNormCache& cache,
                               Mat& dgamma, Mat& dbeta) {
    const Eigen::Index n = dout.cols();
    Mat dx(dout.rows(), n);
    for (Eigen::Index r = 0; r < dout.rows(); ++r) {
        dgamma.row(0) += dout.row(r).cwiseProduct(cache.xhat.row(r));
        dbeta.row(0) += dout.row(r);
        Eigen::RowVectorXd dxhat = dout.row(r).cwiseProduct(gamma.row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) =
            cache.inv_std(r) * (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
    }
    return dx;
}

inline Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& z) {
    const double mx = z.maxCoeff();
    Eigen::RowVectorXd e = (z.array() - mx).exp();
    return e / e.sum();
}

// Numerically stable -log softmax(logits)[target].
inline double cross_entropy_from_logits(const Eigen::RowVectorXd& logits, int target) {
    const double mx = logits.maxCoeff();
    const double lse = std::log((logits.array() - mx).exp().sum()) + mx;
    return lse - logits(target);
}

struct AttentionResult {
    Mat output;   // rows = queries
    Mat weights;  // row-stochastic over unmasked key positions
};

// softmax(Q K^T / sqrt(d_k)) V with masked keys excluded from the softmax.
// key_mask has one entry per K/V row; 1 = attend, 0 = exclude. Masked
// positions get an exact 0 weight, so padding cannot perturb even the last
// bit of the output.
inline AttentionResult self_attention(const Mat& q, const Mat& k, const Mat& v,
                                      const std::vector<int>& key_mask) {
    if (q.cols() != k.cols())
        throw InputError("self_attention: Q and K must share the feature dimension");
    if (k.rows() != v.rows())
        throw InputError("self_attention: K and V must have the same number of rows");
    if (static_cast<Eigen::Index>(key_mask.size()) != k.rows())
        throw InputError("self_attention: mask length must equal the number of key positions");
    bool any = false;
    for (int m : key_mask) any = any || (m != 0);
    if (!any) throw ContractError("self_attention: every key position is masked");

    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Mat scores = (q * k.transpose()) * scale;

    AttentionResult res;
    res.weights = Mat::Zero(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < scores.cols(); ++j)
            if (key_mask[static_cast<std::size_t>(j)] != 0) mx = std::max(mx, scores(r, j));
        double z = 0.0;
        for (Eigen::Index j = 0; j < scores.cols(); ++j)
            if (key_mask[static_cast<std::size_t>(j)] != 0) {
                res.weights(r, j) = std::exp(scores(r, j) - mx);
                z += res.weights(r, j);
            }
        for (Eigen::Index j = 0; j < scores.cols(); ++j) res.weights(r, j) /= z;
    }
    res.output = res.weights * v;
    return res;
}

// ---------------------------------------------------------------------------
// Forward pass with caching for backprop.
//
// Pipeline: token+position+segment embedding sum -> LN -> L x (multi-head
// attention, residual, LN; GELU FFN, residual, LN) -> [CLS] hidden state ->
// tanh pooler -> classifier logits. Dropout (when training) sits on the
// embedding output and on each sublayer output before its residual add.
// ---------------------------------------------------------------------------

struct ForwardOptions {
    bool training = false;   // enables dropout when the config rate is > 0
    Rng* rng = nullptr;      // required when training with dropout
};

struct LayerCache {
    Mat input;                          // (B*T) x H
    std::vector<Mat> qf, kf, vf;        // per example, T x H
    std::vector<std::vector<Mat>> probs;  // [example][head], T x T
    Mat ctx;                            // (B*T) x H, heads concatenated
    Mat attn_proj;                      // ctx * Wo, before dropout
    Mat attn_drop;                      // dropout mask (empty if off)
    LayerNormCache ln1;
    Mat y;                              // after first LN
    Mat ffn_pre;                        // (B*T) x F
    Mat ffn_out;                        // before dropout
    Mat ffn_drop;
    LayerNormCache ln2;
    Mat out;
};

struct ForwardCache {
    int batch = 0;
    int seq_len = 0;
    std::vector<int> ids;       // flattened B*T
    std::vector<int> segments;  // flattened
    std::vector<std::vector<int>> key_mask;  // per example
    Mat emb_sum;
    LayerNormCache emb_ln;
    Mat emb_drop;
    Mat emb;  // layer input 0
    std::vector<LayerCache> layers;
    const Mat& final_hidden() const { return layers.empty() ? emb : layers.back().out; }
    Mat pooled_pre;  // B x H (pre-tanh)
    Mat pooled;      // B x H
    Mat logits;      // B x C
};

namespace detail {

inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat mask(rows, cols);
    const double keep = 1.0 - rate;
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
            mask(r, c) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    return mask;
}

inline void validate_batch(const EncoderConfig& cfg, const std::vector<TokenSequence>& batch) {
    if (batch.empty()) throw InputError("forward: empty batch");
    const std::size_t len = batch.front().length();
    for (const auto& seq : batch) {
        if (seq.length() != len)
            throw InputError("forward: sequences in a batch must share one padded length");
        if (seq.length() > static_cast<std::size_t>(cfg.max_len))
            throw InputError("forward: sequence length " + std::to_string(seq.length()) +
                             " exceeds configured max_len " + std::to_string(cfg.max_len));
        for (int id : seq.ids)
            if (id < 0 || id >= cfg.vocab_size)
                throw InputError("forward: token id " + std::to_string(id) +
                                 " outside vocabulary of size " + std::to_string(cfg.vocab_size));
    }
}

}  // namespace detail

inline ForwardCache encoder_forward(const EncoderModel& model,
                                    const std::vector<TokenSequence>& batch,
                                    const ForwardOptions& opts = {}) {
    const EncoderConfig& cfg = model.config;
    detail::validate_batch(cfg, batch);
    const int B = static_cast<int>(batch.size());
    const int T = static_cast<int>(batch.front().length());
    const int H = cfg.hidden_size, A = cfg.num_heads, dk = cfg.head_dim();
    const bool drop = opts.training && cfg.dropout_rate > 0.0;
    if (drop && opts.rng == nullptr)
        throw ConfigError("training forward with dropout needs an RNG");

    ForwardCache fc;
    fc.batch = B;
    fc.seq_len = T;
    fc.ids.reserve(static_cast<std::size_t>(B) * T);
    fc.segments.reserve(static_cast<std::size_t>(B) * T);
    for (const auto& seq : batch) {
        fc.ids.insert(fc.ids.end(), seq.ids.begin(), seq.ids.end());
        fc.segments.insert(fc.segments.end(), seq.segment_ids.begin(), seq.segment_ids.end());
        fc.key_mask.push_back(seq.attention_mask);
    }

    // embeddings
    fc.emb_sum.resize(static_cast<Eigen::Index>(B) * T, H);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
            const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
            fc.emb_sum.row(r) = model.tok_emb.row(fc.ids[static_cast<std::size_t>(r)]) +
                                model.pos_emb.row(t) +
                                model.seg_emb.row(fc.segments[static_cast<std::size_t>(r)]);
        }
    fc.emb = layer_norm(fc.emb_sum, model.emb_ln_gamma, model.emb_ln_beta, &fc.emb_ln);
    if (drop) {
        fc.emb_drop = detail::dropout_mask(fc.emb.rows(), fc.emb.cols(), cfg.dropout_rate, *opts.rng);
        fc.emb = fc.emb.cwiseProduct(fc.emb_drop);
    }

    Mat x = fc.emb;
    fc.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];
        LayerCache& lc = fc.layers[static_cast<std::size_t>(l)];
        lc.input = x;

        lc.ctx.resize(x.rows(), H);
        lc.qf.resize(static_cast<std::size_t>(B));
        lc.kf.resize(static_cast<std::size_t>(B));
        lc.vf.resize(static_cast<std::size_t>(B));
        lc.probs.assign(static_cast<std::size_t>(B), std::vector<Mat>(static_cast<std::size_t>(A)));
        for (int b = 0; b < B; ++b) {
            const auto xb = x.middleRows(static_cast<Eigen::Index>(b) * T, T);
            Mat qf = xb * w.wq, kf = xb * w.wk, vf = xb * w.wv;
            for (int h = 0; h < A; ++h) {
                auto res = self_attention(qf.middleCols(static_cast<Eigen::Index>(h) * dk, dk),
                                          kf.middleCols(static_cast<Eigen::Index>(h) * dk, dk),
                                          vf.middleCols(static_cast<Eigen::Index>(h) * dk, dk),
                                          fc.key_mask[static_cast<std::size_t>(b)]);
                lc.ctx.block(static_cast<Eigen::Index>(b) * T, static_cast<Eigen::Index>(h) * dk, T,
                             dk) = res.output;
                lc.probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(h)] =
                    std::move(res.weights);
            }
            lc.qf[static_cast<std::size_t>(b)] = std::move(qf);
            lc.kf[static_cast<std::size_t>(b)] = std::move(kf);
            lc.vf[static_cast<std::size_t>(b)] = std::move(vf);
        }
        lc.attn_proj = lc.ctx * w.wo;
        Mat attn = lc.attn_proj;
        if (drop) {
            lc.attn_drop =
                detail::dropout_mask(attn.rows(), attn.cols(), cfg.dropout_rate, *opts.rng);
            attn = attn.cwiseProduct(lc.attn_drop);
        }
        lc.y = layer_norm(lc.input + attn, w.attn_ln_gamma, w.attn_ln_beta, &lc.ln1);

        lc.ffn_pre = lc.y * w.ffn_w1;
        lc.ffn_pre.rowwise() += w.ffn_b1.row(0);
        Mat act = gelu(lc.ffn_pre);
        lc.ffn_out = act * w.ffn_w2;
        lc.ffn_out.rowwise() += w.ffn_b2.row(0);
        Mat ffn = lc.ffn_out;
        if (drop) {
            lc.ffn_drop = detail::dropout_mask(ffn.rows(), ffn.cols(), cfg.dropout_rate, *opts.rng);
            ffn = ffn.cwiseProduct(lc.ffn_drop);
        }
        lc.out = layer_norm(lc.y + ffn, w.ffn_ln_gamma, w.ffn_ln_beta, &lc.ln2);
        x = lc.out;
    }

    // [CLS] pooling and classifier head
    fc.pooled_pre.resize(B, H);
    for (int b = 0; b < B; ++b)
        fc.pooled_pre.row(b) = x.row(static_cast<Eigen::Index>(b) * T) * model.pooler_w +
                               model.pooler_b.row(0);
    fc.pooled = fc.pooled_pre.array().tanh();
    fc.logits = fc.pooled * model.cls_w;
    fc.logits.rowwise() += model.cls_b.row(0);
    return fc;
}

// Inference-mode logits (dropout off).
inline Mat forward(const EncoderModel& model, const std::vector<TokenSequence>& batch) {
    return encoder_forward(model, batch).logits;
}

// ---------------------------------------------------------------------------
// Losses and the backward pass
// ---------------------------------------------------------------------------

struct Objective {
    // Per-example class targets; empty disables the classification loss.
    std::vector<int> class_targets;
    // MLM labels aligned with the batch (kNotMasked where unselected);
    // empty disables the MLM loss.
    std::vector<std::vector<int>> mlm_labels;
};

struct LossResult {
    double total = 0.0;
    double cls_loss = 0.0;
    double mlm_loss = 0.0;
    long mlm_positions = 0;
    Mat logits;
};

namespace detail {

struct MlmRowCache {
    Eigen::Index row;  // flat row in the hidden-state matrix
    int target;
    Eigen::RowVectorXd t_pre, t_act, t_ln;
    Eigen::RowVectorXd xhat;
    double inv_std = 0.0;
    Eigen::RowVectorXd probs;
};

}  // namespace detail

// Forward pass + loss; when `grads` is non-null, accumulates d(loss)/d(param)
// into it. Classification loss is the mean cross entropy over examples, MLM
// loss the mean cross entropy over selected positions; both present => sum.
inline LossResult compute_loss(const EncoderModel& model, const std::vector<TokenSequence>& batch,
                               const Objective& obj, EncoderModel* grads = nullptr,
                               const ForwardOptions& opts = {}) {
    const EncoderConfig& cfg = model.config;
    const bool want_cls = !obj.class_targets.empty();
    const bool want_mlm = !obj.mlm_labels.empty();
    if (!want_cls && !want_mlm) throw ConfigError("loss needs class targets or MLM labels");
    if (want_cls && obj.class_targets.size() != batch.size())
        throw ConfigError("class_targets size must match the batch");
    if (want_mlm && obj.mlm_labels.size() != batch.size())
        throw ConfigError("mlm_labels size must match the batch");

    ForwardCache fc = encoder_forward(model, batch, opts);
    const int B = fc.batch, T = fc.seq_len, H = cfg.hidden_size;
    const Mat& hidden = fc.final_hidden();

    LossResult res;
    res.logits = fc.logits;

    Mat dlogits;
    if (want_cls) {
        dlogits = Mat::Zero(B, cfg.num_classes);
        for (int b = 0; b < B; ++b) {
            const int y = obj.class_targets[static_cast<std::size_t>(b)];
            if (y < 0 || y >= cfg.num_classes)
                throw InputError("class target " + std::to_string(y) + " out of range");
            res.cls_loss += cross_entropy_from_logits(fc.logits.row(b), y);
            if (grads) {
                Eigen::RowVectorXd p = softmax_row(fc.logits.row(b));
                p(y) -= 1.0;
                dlogits.row(b) = p / static_cast<double>(B);
            }
        }
        res.cls_loss /= static_cast<double>(B);
    }

    // MLM head over selected positions
    std::vector<detail::MlmRowCache> mlm_rows;
    if (want_mlm) {
        for (int b = 0; b < B; ++b) {
            const auto& labels = obj.mlm_labels[static_cast<std::size_t>(b)];
            if (labels.size() != static_cast<std::size_t>(T))
                throw ConfigError("mlm label row length must equal the sequence length");
            for (int t = 0; t < T; ++t) {
                const int y = labels[static_cast<std::size_t>(t)];
                if (y == kNotMasked) continue;
                if (y < 0 || y >= cfg.vocab_size)
                    throw InputError("MLM label out of vocabulary range");
                detail::MlmRowCache rc;
                rc.row = static_cast<Eigen::Index>(b) * T + t;
                rc.target = y;
                rc.t_pre = hidden.row(rc.row) * model.mlm_w + model.mlm_b.row(0);
                rc.t_act = rc.t_pre.unaryExpr([](double v) { return gelu_scalar(v); });
                const double mu = rc.t_act.mean();
                const double var = (rc.t_act.array() - mu).square().mean();
                rc.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
                rc.xhat = (rc.t_act.array() - mu) * rc.inv_std;
                rc.t_ln = rc.xhat.cwiseProduct(model.mlm_ln_gamma.row(0)) + model.mlm_ln_beta.row(0);
                Eigen::RowVectorXd logits_v =
                    rc.t_ln * model.tok_emb.transpose() + model.mlm_out_bias.row(0);
                res.mlm_loss += cross_entropy_from_logits(logits_v, y);
                if (grads) rc.probs = softmax_row(logits_v);
                mlm_rows.push_back(std::move(rc));
            }
        }
        if (mlm_rows.empty()) throw ContractError("MLM loss requested with zero masked positions");
        res.mlm_positions = static_cast<long>(mlm_rows.size());
        res.mlm_loss /= static_cast<double>(mlm_rows.size());
    }
    res.total = res.cls_loss + res.mlm_loss;
    if (!grads) return res;

    // ----- backward -----
    Mat dhidden = Mat::Zero(hidden.rows(), H);

    if (want_cls) {
        // classifier and pooler
        Mat g_cls_w = fc.pooled.transpose() * dlogits;
        Mat g_cls_b = dlogits.colwise().sum();
        Mat dpooled = dlogits * model.cls_w.transpose();
        Mat dpre = dpooled.cwiseProduct((1.0 - fc.pooled.array().square()).matrix());
        Mat h0(B, H);
        for (int b = 0; b < B; ++b) h0.row(b) = hidden.row(static_cast<Eigen::Index>(b) * T);
        grads->cls_w += g_cls_w;
        grads->cls_b += g_cls_b;
        grads->pooler_w += h0.transpose() * dpre;
        grads->pooler_b += dpre.colwise().sum();
        Mat dh0 = dpre * model.pooler_w.transpose();
        for (int b = 0; b < B; ++b) dhidden.row(static_cast<Eigen::Index>(b) * T) += dh0.row(b);
    }

    for (const auto& rc : mlm_rows) {
        Eigen::RowVectorXd dlv = rc.probs;
        dlv(rc.target) -= 1.0;
        dlv /= static_cast<double>(mlm_rows.size());
        grads->mlm_out_bias.row(0) += dlv;
        grads->tok_emb += dlv.transpose() * rc.t_ln;  // tied output projection
        Eigen::RowVectorXd dt_ln = dlv * model.tok_emb;
        // layer norm backward on one row
        grads->mlm_ln_gamma.row(0) += dt_ln.cwiseProduct(rc.xhat);
        grads->mlm_ln_beta.row(0) += dt_ln;
        Eigen::RowVectorXd dxhat = dt_ln.cwiseProduct(model.mlm_ln_gamma.row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(rc.xhat).mean();
        Eigen::RowVectorXd dt_act =
            rc.inv_std * (dxhat.array() - m1 - rc.xhat.array() * m2).matrix();
        Eigen::RowVectorXd dt_pre(dt_act.size());
        for (Eigen::Index i = 0; i < dt_act.size(); ++i)
            dt_pre(i) = dt_act(i) * gelu_grad_scalar(rc.t_pre(i));
        grads->mlm_w += hidden.row(rc.row).transpose() * dt_pre;
        grads->mlm_b.row(0) += dt_pre;
        dhidden.row(rc.row) += dt_pre * model.mlm_w.transpose();
    }

    // transformer stack, reversed
    const int A = cfg.num_heads, dk = cfg.head_dim();
    Mat dx = dhidden;
    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const LayerWeights& w = model.layers[static_cast<std::size_t>(l)];
        LayerWeights& gw = grads->layers[static_cast<std::size_t>(l)];
        const LayerCache& lc = fc.layers[static_cast<std::size_t>(l)];

        Mat dres2 = layer_norm_backward(dx, w.ffn_ln_gamma, lc.ln2, gw.ffn_ln_gamma, gw.ffn_ln_beta);
        Mat dffn = lc.ffn_drop.size() > 0 ? dres2.cwiseProduct(lc.ffn_drop) : dres2;
        Mat dy = dres2;  // residual branch

        Mat act = gelu(lc.ffn_pre);
        gw.ffn_w2 += act.transpose() * dffn;
        gw.ffn_b2 += dffn.colwise().sum();
        Mat dact = dffn * w.ffn_w2.transpose();
        Mat dpre = dact.cwiseProduct(
            lc.ffn_pre.unaryExpr([](double v) { return gelu_grad_scalar(v); }));
        gw.ffn_w1 += lc.y.transpose() * dpre;
        gw.ffn_b1 += dpre.colwise().sum();
        dy += dpre * w.ffn_w1.transpose();

        Mat dres1 = layer_norm_backward(dy, w.attn_ln_gamma, lc.ln1, gw.attn_ln_gamma,
                                        gw.attn_ln_beta);
        Mat dattn = lc.attn_drop.size() > 0 ? dres1.cwiseProduct(lc.attn_drop) : dres1;
        Mat dx_next = dres1;  // residual branch

        gw.wo += lc.ctx.transpose() * dattn;
        Mat dctx = dattn * w.wo.transpose();
        const int B2 = fc.batch, T2 = fc.seq_len;
        for (int b = 0; b < B2; ++b) {
            const auto xb = lc.input.middleRows(static_cast<Eigen::Index>(b) * T2, T2);
            const Mat& qf = lc.qf[static_cast<std::size_t>(b)];
            const Mat& kf = lc.kf[static_cast<std::size_t>(b)];
            const Mat& vf = lc.vf[static_cast<std::size_t>(b)];
            Mat dqf = Mat::Zero(T2, cfg.hidden_size);
            Mat dkf = Mat::Zero(T2, cfg.hidden_size);
            Mat dvf = Mat::Zero(T2, cfg.hidden_size);
            const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
            for (int h = 0; h < A; ++h) {
                const Mat& p = lc.probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(h)];
                const auto qh = qf.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
                const auto kh = kf.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
                const auto vh = vf.middleCols(static_cast<Eigen::Index>(h) * dk, dk);
                const auto dctx_h = dctx.block(static_cast<Eigen::Index>(b) * T2,
                                               static_cast<Eigen::Index>(h) * dk, T2, dk);
                Mat dp = dctx_h * vh.transpose();
                dvf.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = p.transpose() * dctx_h;
                // softmax backward: ds = p .* (dp - rowwise dot(dp, p))
                Mat ds(p.rows(), p.cols());
                for (Eigen::Index r = 0; r < p.rows(); ++r) {
                    const double dot = dp.row(r).dot(p.row(r));
                    ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
                }
                dqf.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = (ds * kh) * scale;
                dkf.middleCols(static_cast<Eigen::Index>(h) * dk, dk) =
                    (ds.transpose() * qh) * scale;
            }
            gw.wq += xb.transpose() * dqf;
            gw.wk += xb.transpose() * dkf;
            gw.wv += xb.transpose() * dvf;
            dx_next.middleRows(static_cast<Eigen::Index>(b) * T2, T2) +=
                dqf * w.wq.transpose() + dkf * w.wk.transpose() + dvf * w.wv.transpose();
        }
        dx = dx_next;
    }

    // embeddings
    if (fc.emb_drop.size() > 0) dx = dx.cwiseProduct(fc.emb_drop);
    Mat demb_sum =
        layer_norm_backward(dx, model.emb_ln_gamma, fc.emb_ln, grads->emb_ln_gamma,
                            grads->emb_ln_beta);
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t) {
            const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
            grads->tok_emb.row(fc.ids[static_cast<std::size_t>(r)]) += demb_sum.row(r);
            grads->pos_emb.row(t) += demb_sum.row(r);
            grads->seg_emb.row(fc.segments[static_cast<std::size_t>(r)]) += demb_sum.row(r);
        }
    return res;
}

// MLM-only convenience wrapper: per-position vocabulary loss on a masked batch.
inline LossResult mlm_forward(const EncoderModel& model, const MaskedBatch& masked) {
    Objective obj;
    obj.mlm_labels = masked.mlm_labels;
    long selected = 0;
    for (const auto& row : masked.mlm_labels)
        for (int v : row) selected += (v != kNotMasked);
    if (selected == 0) throw ContractError("mlm_forward: batch has no masked positions");
    return compute_loss(model, masked.inputs, obj);
}

// ---------------------------------------------------------------------------
// Weight container: magic, config header (JSON), then named float64 tensors
// (little-endian) with explicit shapes. load(save(m)) is bitwise identity.
// ---------------------------------------------------------------------------

inline constexpr char kWeightsMagic[8] = {'S', 'B', 'E', 'N', 'C', '0', '0', '1'};

inline void save_weights(const EncoderModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    const std::string header = encoder_config_to_json(model.config).dump();
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    auto& m = const_cast<EncoderModel&>(model);
    const auto refs = param_refs(m);
    const std::uint64_t count = refs.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& r : refs) {
        const std::uint32_t nlen = static_cast<std::uint32_t>(r.name.size());
        out.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
        out.write(r.name.data(), nlen);
        const std::uint64_t rows = static_cast<std::uint64_t>(r.mat->rows());
        const std::uint64_t cols = static_cast<std::uint64_t>(r.mat->cols());
        out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        out.write(reinterpret_cast<const char*>(r.mat->data()),
                  static_cast<std::streamsize>(sizeof(double) * r.mat->size()));
    }
    if (!out) throw IoError("write failure on " + path);
}

// When `expected` is given, the file's config must match its shapes before
// any tensor is read.
inline EncoderModel load_weights(const std::string& path,
                                 const EncoderConfig* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file: " + path);
    char magic[sizeof(kWeightsMagic)];
    if (!in.read(magic, sizeof(magic)) ||
        std::char_traits<char>::compare(magic, kWeightsMagic, sizeof(magic)) != 0)
        throw FormatError("not a sentibench weight container: " + path);
    std::uint64_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)) || hlen > (1u << 20))
        throw FormatError("corrupt weight header in " + path);
    std::string header(hlen, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(hlen)))
        throw FormatError("truncated weight header in " + path);
    EncoderConfig cfg;
    try {
        cfg = encoder_config_from_json(nlohmann::json::parse(header));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("invalid config header in " + path + ": " + e.what());
    }
    if (expected && !cfg.same_shapes(*expected))
        throw ConfigError("weight file config does not match the expected encoder shapes");

    const std::uint64_t expected_tensors = 5 + 12 * static_cast<std::uint64_t>(cfg.num_layers) + 9;
    std::uint64_t count = 0;
    if (!in.read(reinterpret_cast<char*>(&count), sizeof(count)) || count != expected_tensors)
        throw FormatError("weight container lists " + std::to_string(count) +
                          " tensors, expected " + std::to_string(expected_tensors));

    EncoderModel model = init_model(cfg);
    auto refs = param_refs(model);
    for (const auto& r : refs) {
        std::uint32_t nlen = 0;
        if (!in.read(reinterpret_cast<char*>(&nlen), sizeof(nlen)) || nlen > 256)
            throw FormatError("truncated tensor record in " + path);
        std::string name(nlen, '\0');
        if (!in.read(name.data(), nlen)) throw FormatError("truncated tensor name in " + path);
        if (name != r.name)
            throw FormatError("unexpected tensor '" + name + "' (wanted '" + r.name + "')");
        std::uint64_t rows = 0, cols = 0;
        if (!in.read(reinterpret_cast<char*>(&rows), sizeof(rows)) ||
            !in.read(reinterpret_cast<char*>(&cols), sizeof(cols)))
            throw FormatError("truncated tensor shape in " + path);
        if (rows != static_cast<std::uint64_t>(r.mat->rows()) ||
            cols != static_cast<std::uint64_t>(r.mat->cols()))
            throw FormatError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", config implies " +
                              std::to_string(r.mat->rows()) + "x" + std::to_string(r.mat->cols()));
        if (!in.read(reinterpret_cast<char*>(r.mat->data()),
                     static_cast<std::streamsize>(sizeof(double) * r.mat->size())))
            throw FormatError("truncated tensor data for '" + name + "' in " + path);
    }
    return model;
}

}  // namespace sentibench
