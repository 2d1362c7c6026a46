#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lcdiff/autodiff.hpp"
#include "lcdiff/freqlab.hpp"

namespace lcdiff::lcdn {

// ---- reusable graph ops ----

// S_l = sigmoid(W_s * cat(channel-max, channel-mean)); w {k,k,2,1}, b {1}.
template <typename T>
typename ad::Tape<T>::Ref spatial_gate(ad::Tape<T>& tape, typename ad::Tape<T>::Ref x_l,
                                       typename ad::Tape<T>::Ref w, typename ad::Tape<T>::Ref b) {
    if (w->val.dim(2) != 2 || w->val.dim(3) != 1)
        throw std::invalid_argument("spatial_gate: W_s must map 2 channels to 1");
    auto cm = tape.concat_c(tape.channel_max(x_l), tape.channel_mean(x_l));
    return tape.sigmoid(tape.conv2d(cm, w, b));
}

// S_h = sigmoid(W_c2 * relu(W_c1 * (avgpool + maxpool))); reduction ratio r.
template <typename T>
typename ad::Tape<T>::Ref channel_gate(ad::Tape<T>& tape, typename ad::Tape<T>::Ref x_h,
                                       typename ad::Tape<T>::Ref w1, typename ad::Tape<T>::Ref b1,
                                       typename ad::Tape<T>::Ref w2, typename ad::Tape<T>::Ref b2,
                                       int r) {
    const int c = x_h->val.dim(2);
    if (c < r)
        throw std::invalid_argument("channel_gate: C=" + std::to_string(c) + " smaller than reduction ratio r=" +
                                    std::to_string(r));
    auto pooled = tape.add(tape.global_avg_pool(x_h), tape.global_max_pool(x_h));
    return tape.sigmoid(tape.conv2d(tape.relu(tape.conv2d(pooled, w1, b1)), w2, b2));
}

// F = S_l (.) x + S_h (.) x; S_l broadcasts over channels, S_h over space.
template <typename T>
typename ad::Tape<T>::Ref fuse_bands(ad::Tape<T>& tape, typename ad::Tape<T>::Ref x,
                                     typename ad::Tape<T>::Ref s_l, typename ad::Tape<T>::Ref s_h) {
    const int h = x->val.dim(0), w = x->val.dim(1), c = x->val.dim(2);
    if (s_l->val.dim(0) != h || s_l->val.dim(1) != w || s_l->val.dim(2) != 1)
        throw std::invalid_argument("fuse_bands: S_l must be {H,W,1}");
    if (s_h->val.dim(0) != 1 || s_h->val.dim(1) != 1 || s_h->val.dim(2) != c)
        throw std::invalid_argument("fuse_bands: S_h must be {1,1,C}");
    return tape.add(tape.mul(x, s_l), tape.mul(x, s_h));
}

template <typename T>
struct CrossAttnOut {
    typename ad::Tape<T>::Ref z;
    typename ad::Tape<T>::Ref alpha;  // {tokens, tokens}, rows sum to 1
};

// Channel-token cross-attention: Q = W_q*f, (K,V) = split(W_k*x), tokens are
// channels and features are the flattened spatial axis, alpha =
// softmax(Q K^T / sqrt(d)) with d the declared flattened spatial size.
template <typename T>
CrossAttnOut<T> cross_attention_full(ad::Tape<T>& tape, typename ad::Tape<T>::Ref f,
                                     typename ad::Tape<T>::Ref x, typename ad::Tape<T>::Ref wq,
                                     typename ad::Tape<T>::Ref bq, typename ad::Tape<T>::Ref wk,
                                     typename ad::Tape<T>::Ref bk, typename ad::Tape<T>::Ref wo,
                                     typename ad::Tape<T>::Ref bo, int d) {
    const int h = f->val.dim(0), w = f->val.dim(1);
    if (x->val.dim(0) != h || x->val.dim(1) != w)
        throw std::invalid_argument("cross_attention: spatial dims of f and x differ");
    if (d <= 0 || d != h * w)
        throw std::invalid_argument("cross_attention: d=" + std::to_string(d) +
                                    " does not match flattened spatial size " + std::to_string(h * w));
    auto q = tape.conv2d(f, wq, bq);
    auto kv = tape.conv2d(x, wk, bk);
    const int two_ct = kv->val.dim(2);
    if (two_ct % 2 != 0) throw std::invalid_argument("cross_attention: W_k output must split evenly into K and V");
    const int ct = two_ct / 2;
    if (q->val.dim(2) != ct)
        throw std::invalid_argument("cross_attention: Q tokens " + std::to_string(q->val.dim(2)) +
                                    " != K tokens " + std::to_string(ct));
    auto qm = tape.channels_to_rows(q);
    auto km = tape.channels_to_rows(tape.slice_c(kv, 0, ct));
    auto vm = tape.channels_to_rows(tape.slice_c(kv, ct, two_ct));
    auto logits = tape.scale(tape.matmul(qm, tape.transpose(km)), 1.0 / std::sqrt(static_cast<double>(d)));
    auto alpha = tape.softmax_rows(logits);
    auto z = tape.conv2d(tape.rows_to_channels(tape.matmul(alpha, vm), h, w), wo, bo);
    return {z, alpha};
}

template <typename T>
typename ad::Tape<T>::Ref cross_attention(ad::Tape<T>& tape, typename ad::Tape<T>::Ref f,
                                          typename ad::Tape<T>::Ref x, typename ad::Tape<T>::Ref wq,
                                          typename ad::Tape<T>::Ref bq, typename ad::Tape<T>::Ref wk,
                                          typename ad::Tape<T>::Ref bk, typename ad::Tape<T>::Ref wo,
                                          typename ad::Tape<T>::Ref bo, int d) {
    return cross_attention_full(tape, f, x, wq, bq, wk, bk, wo, bo, d).z;
}

// ---- LRM: residual luminance restorer ----

struct LrmConfig {
    int width = 16;
    int blocks = 4;
};

template <typename T>
class LrmNet {
public:
    using Ref = typename ad::Tape<T>::Ref;

    LrmNet(ad::ParamStore<T>& store, const LrmConfig& cfg, Rng& rng, std::string prefix = "lrm")
        : store_(&store), cfg_(cfg) {
        if (cfg.width < 2 || cfg.blocks < 1) throw std::invalid_argument("LrmNet: width >= 2, blocks >= 1");
        const int w = cfg.width;
        stem_w_ = store.add(prefix + ".stem.w", ad::conv_init<T>(3, 3, 1, w, rng));
        stem_b_ = store.add(prefix + ".stem.b", Tensor<T>({w}));
        for (int i = 0; i < cfg.blocks; ++i) {
            const std::string p = prefix + ".block" + std::to_string(i);
            Block b;
            b.ln_g = store.add(p + ".ln.g", Tensor<T>({w}, T(1)));
            b.ln_b = store.add(p + ".ln.b", Tensor<T>({w}));
            b.expand_w = store.add(p + ".expand.w", ad::conv_init<T>(1, 1, w, 2 * w, rng));
            b.expand_b = store.add(p + ".expand.b", Tensor<T>({2 * w}));
            b.dw_w = store.add(p + ".dw.w", ad::dwconv_init<T>(3, 3, 2 * w, rng));
            b.dw_b = store.add(p + ".dw.b", Tensor<T>({2 * w}));
            b.pa_w = store.add(p + ".pa.w", ad::conv_init<T>(1, 1, w, w, rng));
            b.pa_b = store.add(p + ".pa.b", Tensor<T>({w}));
            b.sca_w = store.add(p + ".sca.w", ad::conv_init<T>(1, 1, w, w, rng));
            b.sca_b = store.add(p + ".sca.b", Tensor<T>({w}, T(1)));
            b.proj_w = store.add(p + ".proj.w", ad::conv_init<T>(1, 1, w, w, rng));
            b.proj_b = store.add(p + ".proj.b", Tensor<T>({w}));
            blocks_.push_back(b);
        }
        // zero tail makes the whole net the identity at initialization
        tail_w_ = store.add(prefix + ".tail.w", Tensor<T>({3, 3, w, 1}));
        tail_b_ = store.add(prefix + ".tail.b", Tensor<T>({1}));
    }

    Ref forward(ad::Tape<T>& tape, Ref x_lum) const {
        if (x_lum->val.ndim() != 3 || x_lum->val.dim(2) != 1)
            throw std::invalid_argument("lrm_forward: expected {H,W,1}, got " + shape_str(x_lum->val));
        if (!all_finite(x_lum->val)) throw numeric_error("lrm_forward: non-finite input luminance");
        auto& s = *store_;
        const int w = cfg_.width;
        auto h = tape.conv2d(x_lum, tape.param(s.at(stem_w_)), tape.param(s.at(stem_b_)));
        int idx = 0;
        for (const auto& b : blocks_) {
            auto u = tape.layer_norm(h, tape.param(s.at(b.ln_g)), tape.param(s.at(b.ln_b)));
            auto t = tape.conv2d(u, tape.param(s.at(b.expand_w)), tape.param(s.at(b.expand_b)));
            t = tape.dwconv2d(t, tape.param(s.at(b.dw_w)), tape.param(s.at(b.dw_b)));
            // gated activation (SimpleGate)
            t = tape.mul(tape.slice_c(t, 0, w), tape.slice_c(t, w, 2 * w));
            // pixel attention
            t = tape.mul(t, tape.sigmoid(tape.conv2d(t, tape.param(s.at(b.pa_w)), tape.param(s.at(b.pa_b)))));
            // simplified channel attention
            t = tape.mul(t, tape.conv2d(tape.global_avg_pool(t), tape.param(s.at(b.sca_w)), tape.param(s.at(b.sca_b))));
            t = tape.conv2d(t, tape.param(s.at(b.proj_w)), tape.param(s.at(b.proj_b)));
            h = tape.add(h, t);
            check_block(h->val, idx++);
        }
        auto res = tape.conv2d(h, tape.param(s.at(tail_w_)), tape.param(s.at(tail_b_)));
        return tape.add(x_lum, res);
    }

    const LrmConfig& config() const { return cfg_; }

private:
    struct Block {
        int ln_g, ln_b, expand_w, expand_b, dw_w, dw_b, pa_w, pa_b, sca_w, sca_b, proj_w, proj_b;
    };

    static void check_block(const Tensor<T>& v, int idx) {
        if (all_finite(v)) return;
        double mx = 0.0;
        std::size_t bad = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double d = static_cast<double>(v[i]);
            if (std::isfinite(d)) mx = std::max(mx, std::abs(d));
            else ++bad;
        }
        throw numeric_error("lrm_forward: non-finite activations after block " + std::to_string(idx) + " (" +
                            std::to_string(bad) + " bad values, max finite |x|=" + std::to_string(mx) + ")");
    }

    ad::ParamStore<T>* store_;
    LrmConfig cfg_;
    int stem_w_, stem_b_, tail_w_, tail_b_;
    std::vector<Block> blocks_;
};

// ---- FCRM: frequency chroma restorer ----

struct FcrmConfig {
    int width = 16;          // lifted feature channels (chroma has only 2)
    int tokens = 8;          // attention channel tokens
    int reduction = 4;       // channel-gate squeeze ratio r
    int spatial_kernel = 7;  // W_s kernel
    int d = 64 * 64;         // declared flattened spatial size for attention
};

template <typename T>
class FcrmNet {
public:
    using Ref = typename ad::Tape<T>::Ref;

    FcrmNet(ad::ParamStore<T>& store, const FcrmConfig& cfg, Rng& rng, std::string prefix = "fcrm")
        : store_(&store), cfg_(cfg) {
        if (cfg.width < cfg.reduction)
            throw std::invalid_argument("FcrmNet: feature width " + std::to_string(cfg.width) +
                                        " < reduction ratio " + std::to_string(cfg.reduction));
        if (cfg.tokens < 1 || cfg.d <= 0 || cfg.spatial_kernel % 2 == 0)
            throw std::invalid_argument("FcrmNet: bad config");
        const int wc = cfg.width, ct = cfg.tokens, r = cfg.reduction, k = cfg.spatial_kernel;
        stem_w_ = store.add(prefix + ".stem.w", ad::conv_init<T>(1, 1, 2, wc, rng));
        stem_b_ = store.add(prefix + ".stem.b", Tensor<T>({wc}));
        ws_w_ = store.add(prefix + ".ws.w", ad::conv_init<T>(k, k, 2, 1, rng));
        ws_b_ = store.add(prefix + ".ws.b", Tensor<T>({1}));
        wc1_w_ = store.add(prefix + ".wc1.w", ad::conv_init<T>(1, 1, wc, wc / r, rng));
        wc1_b_ = store.add(prefix + ".wc1.b", Tensor<T>({wc / r}));
        wc2_w_ = store.add(prefix + ".wc2.w", ad::conv_init<T>(1, 1, wc / r, wc, rng));
        wc2_b_ = store.add(prefix + ".wc2.b", Tensor<T>({wc}));
        wq_w_ = store.add(prefix + ".wq.w", ad::conv_init<T>(1, 1, wc, ct, rng));
        wq_b_ = store.add(prefix + ".wq.b", Tensor<T>({ct}));
        wk_w_ = store.add(prefix + ".wk.w", ad::conv_init<T>(1, 1, 2, 2 * ct, rng));
        wk_b_ = store.add(prefix + ".wk.b", Tensor<T>({2 * ct}));
        // zero weights + unit bias make z == 1, so modulation starts as identity
        wo_w_ = store.add(prefix + ".wo.w", Tensor<T>({1, 1, ct, 2}));
        wo_b_ = store.add(prefix + ".wo.b", Tensor<T>({2}, T(1)));
    }

    Ref forward(ad::Tape<T>& tape, Ref x_chrom, const freqlab::SpectralMaskPair& masks) const {
        if (x_chrom->val.ndim() != 3 || x_chrom->val.dim(2) != 2)
            throw std::invalid_argument("fcrm_forward: expected {H,W,2}, got " + shape_str(x_chrom->val));
        auto& s = *store_;
        auto xf = tape.conv2d(x_chrom, tape.param(s.at(stem_w_)), tape.param(s.at(stem_b_)));
        auto x_l = tape.mask_filter(xf, masks, true);
        auto x_h = tape.mask_filter(xf, masks, false);
        auto s_l = spatial_gate(tape, x_l, tape.param(s.at(ws_w_)), tape.param(s.at(ws_b_)));
        auto s_h = channel_gate(tape, x_h, tape.param(s.at(wc1_w_)), tape.param(s.at(wc1_b_)),
                                tape.param(s.at(wc2_w_)), tape.param(s.at(wc2_b_)), cfg_.reduction);
        auto fused = fuse_bands(tape, xf, s_l, s_h);
        auto z = cross_attention(tape, fused, x_chrom, tape.param(s.at(wq_w_)), tape.param(s.at(wq_b_)),
                                 tape.param(s.at(wk_w_)), tape.param(s.at(wk_b_)), tape.param(s.at(wo_w_)),
                                 tape.param(s.at(wo_b_)), cfg_.d);
        auto out = tape.mul(z, x_chrom);
        if (!all_finite(out->val)) throw numeric_error("fcrm_forward: non-finite output");
        return out;
    }

    const FcrmConfig& config() const { return cfg_; }

private:
    ad::ParamStore<T>* store_;
    FcrmConfig cfg_;
    int stem_w_, stem_b_, ws_w_, ws_b_, wc1_w_, wc1_b_, wc2_w_, wc2_b_, wq_w_, wq_b_, wk_w_, wk_b_, wo_w_, wo_b_;
};

// ---- whole coarse restorer ----

struct LcdnConfig {
    int height = 64;
    int width = 64;
    double cutoff_ratio = 0.25;
    LrmConfig lrm;
    FcrmConfig fcrm;
};

template <typename T>
class LcdnModel {
public:
    using Ref = typename ad::Tape<T>::Ref;

    struct Out {
        Ref lum;
        Ref chrom;
        Ref ycc;  // cat(lum, chrom), {H,W,3}
    };

    LcdnModel(ad::ParamStore<T>& store, LcdnConfig cfg, Rng& rng) : cfg_(fixup(std::move(cfg))) {
        masks_ = freqlab::make_masks(cfg_.height, cfg_.width, cfg_.cutoff_ratio);
        lrm_ = std::make_unique<LrmNet<T>>(store, cfg_.lrm, rng);
        fcrm_ = std::make_unique<FcrmNet<T>>(store, cfg_.fcrm, rng);
    }

    Out forward(ad::Tape<T>& tape, const Tensor<T>& lum, const Tensor<T>& chrom) const {
        if (lum.dim(0) != cfg_.height || lum.dim(1) != cfg_.width)
            throw std::invalid_argument("LcdnModel: input " + shape_str(lum) + " does not match configured " +
                                        std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
        Out o;
        o.lum = lrm_->forward(tape, tape.constant(lum));
        o.chrom = fcrm_->forward(tape, tape.constant(chrom), masks_);
        o.ycc = tape.concat_c(o.lum, o.chrom);
        return o;
    }

    const LcdnConfig& config() const { return cfg_; }
    const freqlab::SpectralMaskPair& masks() const { return masks_; }
    const LrmNet<T>& lrm() const { return *lrm_; }
    const FcrmNet<T>& fcrm() const { return *fcrm_; }

private:
    static LcdnConfig fixup(LcdnConfig c) {
        c.fcrm.d = c.height * c.width;  // attention d is the flattened spatial size
        return c;
    }

    LcdnConfig cfg_;
    freqlab::SpectralMaskPair masks_;
    std::unique_ptr<LrmNet<T>> lrm_;
    std::unique_ptr<FcrmNet<T>> fcrm_;
};

}  // namespace lcdiff::lcdn
