#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcdiff/autodiff.hpp"
#include "lcdiff/schedule.hpp"

namespace lcdiff::lgdm {

// Sinusoidal time embedding, length emb (even).
template <typename T>
Tensor<T> time_embedding(int t, int emb) {
    if (emb < 2 || emb % 2) throw std::invalid_argument("time_embedding: emb must be even and >= 2");
    Tensor<T> e({1, 1, emb});
    const int half = emb / 2;
    for (int i = 0; i < half; ++i) {
        const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e.at(0, 0, i) = static_cast<T>(std::sin(t * f));
        e.at(0, 0, half + i) = static_cast<T>(std::cos(t * f));
    }
    return e;
}

struct DenoiserConfig {
    int width = 16;     // level-1 channels; level 2 uses 2x
    int emb = 32;       // time-embedding length
    int cond_channels = 1;
};

// Small conditional two-level U-shaped denoiser predicting eps. Input is
// cat(x_t, cond); the time embedding is projected into every block.
template <typename T>
class DenoiserNet {
public:
    using Ref = typename ad::Tape<T>::Ref;

    DenoiserNet(ad::ParamStore<T>& store, const DenoiserConfig& cfg, Rng& rng, std::string prefix = "den")
        : store_(&store), cfg_(cfg) {
        if (cfg.width < 2 || cfg.emb < 2 || cfg.emb % 2 || cfg.cond_channels < 1)
            throw std::invalid_argument("DenoiserNet: bad config");
        const int w1 = cfg.width, w2 = 2 * cfg.width, ci = 3 + cfg.cond_channels;
        stem_w_ = store.add(prefix + ".stem.w", ad::conv_init<T>(3, 3, ci, w1, rng));
        stem_b_ = store.add(prefix + ".stem.b", Tensor<T>({w1}));
        enc_ = add_block(store, prefix + ".enc", w1, rng);
        down_w_ = store.add(prefix + ".down.w", ad::conv_init<T>(1, 1, w1, w2, rng));
        down_b_ = store.add(prefix + ".down.b", Tensor<T>({w2}));
        mid_ = add_block(store, prefix + ".mid", w2, rng);
        up_w_ = store.add(prefix + ".up.w", ad::conv_init<T>(1, 1, w2, w1, rng));
        up_b_ = store.add(prefix + ".up.b", Tensor<T>({w1}));
        fuse_w_ = store.add(prefix + ".fuse.w", ad::conv_init<T>(3, 3, 2 * w1, w1, rng));
        fuse_b_ = store.add(prefix + ".fuse.b", Tensor<T>({w1}));
        dec_ = add_block(store, prefix + ".dec", w1, rng);
        out_w_ = store.add(prefix + ".out.w", Tensor<T>({3, 3, w1, 3}));  // zero: eps_hat = 0 at init
        out_b_ = store.add(prefix + ".out.b", Tensor<T>({3}));
    }

    Ref forward(ad::Tape<T>& tape, Ref x_t, Ref cond, int t) const {
        const int h = x_t->val.dim(0), w = x_t->val.dim(1);
        if (x_t->val.ndim() != 3 || x_t->val.dim(2) != 3)
            throw std::invalid_argument("denoiser: x_t must be {H,W,3}");
        if (h < 16 || w < 16 || h % 2 || w % 2)
            throw std::invalid_argument("denoiser: needs even H,W >= 16, got " + shape_str(x_t->val));
        if (cond->val.dim(0) != h || cond->val.dim(1) != w || cond->val.dim(2) != cfg_.cond_channels)
            throw std::invalid_argument("denoiser: condition shape mismatch");
        auto& s = *store_;
        auto temb = tape.constant(time_embedding<T>(t, cfg_.emb));
        auto x = tape.concat_c(x_t, cond);
        x = tape.conv2d(x, tape.param(s.at(stem_w_)), tape.param(s.at(stem_b_)));
        auto e1 = run_block(tape, enc_, x, temb);
        auto d = tape.conv2d(tape.avg_pool2(e1), tape.param(s.at(down_w_)), tape.param(s.at(down_b_)));
        d = run_block(tape, mid_, d, temb);
        auto u = tape.conv2d(tape.upsample_nearest2(d), tape.param(s.at(up_w_)), tape.param(s.at(up_b_)));
        auto f = tape.conv2d(tape.concat_c(u, e1), tape.param(s.at(fuse_w_)), tape.param(s.at(fuse_b_)));
        f = run_block(tape, dec_, f, temb);
        auto out = tape.conv2d(f, tape.param(s.at(out_w_)), tape.param(s.at(out_b_)));
        if (!all_finite(out->val)) throw numeric_error("denoiser: non-finite output at t=" + std::to_string(t));
        return out;
    }

    const DenoiserConfig& config() const { return cfg_; }

private:
    struct BlockIdx {
        int ln_g, ln_b, c1_w, c1_b, temb_w, temb_b, c2_w, c2_b;
    };

    BlockIdx add_block(ad::ParamStore<T>& store, const std::string& p, int w, Rng& rng) {
        BlockIdx b;
        b.ln_g = store.add(p + ".ln.g", Tensor<T>({w}, T(1)));
        b.ln_b = store.add(p + ".ln.b", Tensor<T>({w}));
        b.c1_w = store.add(p + ".c1.w", ad::conv_init<T>(3, 3, w, w, rng));
        b.c1_b = store.add(p + ".c1.b", Tensor<T>({w}));
        b.temb_w = store.add(p + ".temb.w", ad::conv_init<T>(1, 1, cfg_.emb, w, rng));
        b.temb_b = store.add(p + ".temb.b", Tensor<T>({w}));
        b.c2_w = store.add(p + ".c2.w", ad::conv_init<T>(3, 3, w, w, rng));
        b.c2_b = store.add(p + ".c2.b", Tensor<T>({w}));
        return b;
    }

    Ref run_block(ad::Tape<T>& tape, const BlockIdx& b, Ref x, Ref temb) const {
        auto& s = *store_;
        auto h = tape.layer_norm(x, tape.param(s.at(b.ln_g)), tape.param(s.at(b.ln_b)));
        h = tape.conv2d(h, tape.param(s.at(b.c1_w)), tape.param(s.at(b.c1_b)));
        h = tape.add(h, tape.conv2d(temb, tape.param(s.at(b.temb_w)), tape.param(s.at(b.temb_b))));
        h = tape.silu(h);
        h = tape.conv2d(h, tape.param(s.at(b.c2_w)), tape.param(s.at(b.c2_b)));
        return tape.add(x, h);
    }

    ad::ParamStore<T>* store_;
    DenoiserConfig cfg_;
    int stem_w_, stem_b_, down_w_, down_b_, up_w_, up_b_, fuse_w_, fuse_b_, out_w_, out_b_;
    BlockIdx enc_, mid_, dec_;
};

// G: maps restored luminance {H,W,1} to the condition tensor. "identity"
// passes the luminance through (cond_channels 1); "conv" is a 2-conv encoder.
template <typename T>
class ConditionEncoder {
public:
    using Ref = typename ad::Tape<T>::Ref;

    ConditionEncoder(ad::ParamStore<T>& store, const std::string& mode, int channels, Rng& rng,
                     std::string prefix = "cond")
        : store_(&store), mode_(mode), channels_(mode == "identity" ? 1 : channels) {
        if (mode_ == "identity") return;
        if (mode_ != "conv") throw std::invalid_argument("ConditionEncoder: mode must be identity or conv");
        if (channels_ < 1) throw std::invalid_argument("ConditionEncoder: channels >= 1");
        c1_w_ = store.add(prefix + ".c1.w", ad::conv_init<T>(3, 3, 1, channels_, rng));
        c1_b_ = store.add(prefix + ".c1.b", Tensor<T>({channels_}));
        c2_w_ = store.add(prefix + ".c2.w", ad::conv_init<T>(3, 3, channels_, channels_, rng));
        c2_b_ = store.add(prefix + ".c2.b", Tensor<T>({channels_}));
    }

    Ref forward(ad::Tape<T>& tape, Ref lum) const {
        if (lum->val.ndim() != 3 || lum->val.dim(2) != 1)
            throw std::invalid_argument("ConditionEncoder: expected {H,W,1}");
        if (mode_ == "identity") return lum;
        auto& s = *store_;
        auto h = tape.silu(tape.conv2d(lum, tape.param(s.at(c1_w_)), tape.param(s.at(c1_b_))));
        return tape.conv2d(h, tape.param(s.at(c2_w_)), tape.param(s.at(c2_b_)));
    }

    int channels() const { return channels_; }
    const std::string& mode() const { return mode_; }

private:
    ad::ParamStore<T>* store_;
    std::string mode_;
    int channels_ = 1;
    int c1_w_ = -1, c1_b_ = -1, c2_w_ = -1, c2_b_ = -1;
};

// shadow <- decay * shadow + (1-decay) * params, matched by name.
template <typename T>
void ema_update(ad::ParamStore<T>& shadow, const ad::ParamStore<T>& params, double decay = 0.995) {
    if (decay < 0.0 || decay > 1.0) throw std::invalid_argument("ema_update: decay outside [0,1]");
    if (shadow.size() != params.size()) throw std::invalid_argument("ema_update: store sizes differ");
    const T d = static_cast<T>(decay), od = static_cast<T>(1.0 - decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& se = shadow.at(static_cast<int>(i));
        const auto& pe = params.at(static_cast<int>(i));
        if (se.name != pe.name || !se.value.same_shape(pe.value))
            throw std::invalid_argument("ema_update: mismatched entry " + se.name);
        for (std::size_t j = 0; j < se.value.size(); ++j) se.value[j] = d * se.value[j] + od * pe.value[j];
    }
}

// Uniform-stride DDIM timestep subsequence tau = t_0 > t_1 > ... > t_n = 0.
inline std::vector<int> ddim_timesteps(int tau, int n_steps) {
    std::vector<int> ts(static_cast<std::size_t>(n_steps) + 1);
    for (int j = 0; j <= n_steps; ++j)
        ts[static_cast<std::size_t>(j)] =
            static_cast<int>(std::llround(static_cast<double>(tau) * (1.0 - static_cast<double>(j) / n_steps)));
    return ts;
}

// DDIM sampling from the come-closer initialization: noise the coarse
// restoration to step tau and denoise back. eps_fn(x_t, t) -> eps_hat.
// Deterministic when eta_ddim == 0.
template <typename T, typename EpsFn>
Tensor<T> ddim_sample(EpsFn&& eps_fn, const Tensor<T>& coarse_x0, int tau, const NoiseSchedule& sched,
                      int n_steps, double eta_ddim, std::uint64_t seed) {
    if (tau < 0 || tau > sched.T)
        throw std::invalid_argument("ddim_sample: tau outside [0,T]");
    if (tau == 0) return coarse_x0;  // zero-step passthrough
    if (n_steps < 1 || n_steps > tau)
        throw std::invalid_argument("ddim_sample: n_steps must be in [1,tau], got " + std::to_string(n_steps));
    if (eta_ddim < 0.0) throw std::invalid_argument("ddim_sample: eta_ddim must be >= 0");
    Rng rng(mix_seed(seed, hash_str("ddim_sample")));
    Tensor<T> x = q_sample(coarse_x0, tau, sample_noise<T>(coarse_x0.shape(), rng), sched);
    const std::vector<int> ts = ddim_timesteps(tau, n_steps);
    for (int j = 0; j < n_steps; ++j) {
        const int t = ts[static_cast<std::size_t>(j)], tn = ts[static_cast<std::size_t>(j) + 1];
        Tensor<T> eps_hat = eps_fn(x, t);
        if (!eps_hat.same_shape(x)) throw std::invalid_argument("ddim_sample: eps_fn shape mismatch");
        Tensor<T> x0 = predict_x0(x, eps_hat, t, sched);
        if (tn == 0) {
            x = std::move(x0);
            break;
        }
        const double ab_t = sched.alpha_bar[static_cast<std::size_t>(t)];
        const double ab_n = sched.alpha_bar[static_cast<std::size_t>(tn)];
        const double sig =
            eta_ddim * std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_n);
        const double dir = std::sqrt(std::max(1.0 - ab_n - sig * sig, 0.0));
        const T c0 = static_cast<T>(std::sqrt(ab_n)), cd = static_cast<T>(dir), cs = static_cast<T>(sig);
        for (std::size_t i = 0; i < x.size(); ++i) {
            T v = c0 * x0[i] + cd * eps_hat[i];
            if (eta_ddim > 0.0) v += cs * static_cast<T>(rng.normal());
            x[i] = v;
        }
        if (!all_finite(x)) throw numeric_error("ddim_sample: non-finite state at t=" + std::to_string(tn));
    }
    return x;
}

}  // namespace lcdiff::lgdm
