#include "lcdiff/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "lcdiff/losses.hpp"
#include "lcdiff/pipeline.hpp"

namespace lcdiff {

namespace fs = std::filesystem;
using json = nlohmann::json;

double cosine_lr(double base, std::int64_t step, std::int64_t total, double floor) {
    if (total < 1) throw std::invalid_argument("cosine_lr: total must be >= 1");
    if (step < 0) step = 0;
    if (step > total) step = total;
    const double lr = base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                                   static_cast<double>(total)));
    return std::max(lr, floor);
}

Adam::Adam(ad::ParamStore<float>& store, double beta1, double beta2, double eps)
    : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& e : store.entries()) {
        m_.emplace_back(e.value.shape());
        v_.emplace_back(e.value.shape());
    }
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& entries = store_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& e = entries[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < e.value.size(); ++j) {
            const double g = static_cast<double>(e.grad[j]);
            const double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
            const double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            e.value[j] -= static_cast<float>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
        }
    }
}

std::vector<TrainSample> load_pairs(const fs::path& manifest_path) {
    const auto manifest = weathersim::load_manifest(manifest_path);
    if (manifest.entries.empty()) throw std::invalid_argument("load_pairs: manifest has no entries");
    std::vector<TrainSample> out;
    for (const auto& e : manifest.entries) {
        const Image deg = load_png(weathersim::resolve(manifest_path, e.degraded).string());
        const Image clean = load_png(weathersim::resolve(manifest_path, e.clean).string());
        if (!deg.pix.same_shape(clean.pix))
            throw std::invalid_argument("load_pairs: pair shape mismatch for " + e.degraded);
        const auto dycc = colorlab::rgb_to_ycbcr(deg);
        const auto cycc = colorlab::rgb_to_ycbcr(clean);
        TrainSample s;
        s.name = fs::path(e.degraded).stem().string();
        s.kind = e.kind;
        s.lum_deg = dycc.lum.cast<float>();
        s.chrom_deg = dycc.chrom.cast<float>();
        s.lum_clean = cycc.lum.cast<float>();
        s.chrom_clean = cycc.chrom.cast<float>();
        out.push_back(std::move(s));
    }
    return out;
}

void save_history(const std::vector<HistoryPoint>& h, const fs::path& path, const std::string& label,
                  std::uint64_t config_hash) {
    json j;
    j["label"] = label;
    j["config_hash"] = config_hash;
    j["points"] = json::array();
    for (const auto& p : h) j["points"].push_back({{"step", p.step}, {"loss", p.loss}, {"lr", p.lr}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_history: cannot write " + path.string());
    f << j.dump(2) << "\n";
}

LcdnTrainResult train_lcdn(const fs::path& manifest_path, const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const auto samples = load_pairs(manifest_path);
    for (const auto& s : samples)
        if (s.lum_deg.dim(0) != cfg.image_size || s.lum_deg.dim(1) != cfg.image_size)
            throw std::invalid_argument("train_lcdn: sample " + s.name + " does not match image_size");

    ad::ParamStore<float> store;
    Rng init_rng(mix_seed(cfg.seed, hash_str("lcdn_init")));
    lcdn::LcdnModel<float> model(store, cfg.lcdn_config(), init_rng);
    Adam opt(store);
    Rng rng(mix_seed(cfg.seed, hash_str("lcdn_train")));
    const LossWeights weights = cfg.loss_weights();
    const std::uint64_t chash = config_hash(cfg);
    const fs::path ckpt_dir = out_dir / "lcdn-ckpt";

    LcdnTrainResult res;
    res.ckpt_dir = ckpt_dir;
    fs::create_directories(out_dir);
    bool have_ckpt = false;
    for (int step = 1; step <= cfg.lcdn_steps; ++step) {
        const auto& s = samples[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(samples.size()) - 1))];
        ad::Tape<float> tape;
        auto out = model.forward(tape, s.lum_deg, s.chrom_deg);
        Tensor<float> target({cfg.image_size, cfg.image_size, 3});
        for (int y = 0; y < cfg.image_size; ++y)
            for (int x = 0; x < cfg.image_size; ++x) {
                target.at(y, x, 0) = s.lum_clean.at(y, x, 0);
                target.at(y, x, 1) = s.chrom_clean.at(y, x, 0);
                target.at(y, x, 2) = s.chrom_clean.at(y, x, 1);
            }
        auto loss = ad::restoration_loss(tape, out.ycc, tape.constant(target), weights);
        const double lv = static_cast<double>(loss->val[0]);
        if (!std::isfinite(lv)) {
            if (have_ckpt)
                std::cerr << "train_lcdn: NaN loss at step " << step << "; last checkpoint kept at " << ckpt_dir
                          << "\n";
            throw numeric_error("train_lcdn: non-finite loss at step " + std::to_string(step));
        }
        store.zero_grad();
        tape.backward(loss);
        const double lr = cosine_lr(cfg.lcdn_lr, step - 1, cfg.lcdn_steps);
        opt.step(lr);
        if (!store.values_finite())
            throw numeric_error("train_lcdn: non-finite parameters after step " + std::to_string(step));
        if (step == 1) res.initial_loss = lv;
        res.final_loss = lv;
        res.history.push_back({step, lv, lr});
        if (step % cfg.ckpt_every == 0 || step == cfg.lcdn_steps) {
            save_checkpoint(ckpt_dir, store, CheckpointMeta{step, chash});
            have_ckpt = true;
        }
    }
    save_history(res.history, out_dir / "lcdn-history.json", "lcdn", chash);
    return res;
}

LgdmTrainResult train_lgdm(const fs::path& manifest_path, const fs::path& lcdn_ckpt, const RunConfig& cfg,
                           const fs::path& out_dir) {
    cfg.validate();
    const auto samples = load_pairs(manifest_path);

    LcdnRuntime lcdn_rt(cfg);
    lcdn_rt.load(lcdn_ckpt);

    ad::ParamStore<float> store;
    Rng init_rng(mix_seed(cfg.seed, hash_str("lgdm_init")));
    lgdm::DenoiserNet<float> den(store, cfg.denoiser_config(), init_rng);
    lgdm::ConditionEncoder<float> enc(store, cfg.cond_mode, cfg.cond_mode == "identity" ? 1 : cfg.cond_channels,
                                      init_rng);
    const auto sched = lgdm::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    const DtsConfig dts = cfg.dts_config();

    // Conditions come from the frozen coarse restorer, computed once per sample.
    // lgdm_target picks what gets noised: "clean" diffuses the ground truth,
    // "coarse" diffuses the restorer output (matching the distribution the
    // sampler sees at inference). L_dts always scores x0_hat against the clean.
    struct Prepared {
        Tensor<float> x0;     // noising source (clean or coarse YCbCr)
        Tensor<float> clean;  // dts target
        Tensor<float> lum;    // restored luminance driving the condition
    };
    std::vector<Prepared> prep;
    for (const auto& s : samples) {
        colorlab::YCbCrImage deg;
        deg.lum = s.lum_deg.cast<double>();
        deg.chrom = s.chrom_deg.cast<double>();
        const auto coarse = lcdn_rt.restore(deg);
        Prepared p;
        p.lum = coarse.lum.cast<float>();
        colorlab::YCbCrImage clean;
        clean.lum = s.lum_clean.cast<double>();
        clean.chrom = s.chrom_clean.cast<double>();
        p.clean = colorlab::pack_ycc(clean).cast<float>();
        p.x0 = cfg.lgdm_target == "coarse" ? colorlab::pack_ycc(coarse).cast<float>() : p.clean;
        prep.push_back(std::move(p));
    }

    // EMA shadow starts as a copy of the initial weights.
    ad::ParamStore<float> shadow;
    for (const auto& e : store.entries()) {
        Tensor<float> v = e.value;
        shadow.add(e.name, std::move(v));
    }

    Adam opt(store);
    Rng rng(mix_seed(cfg.seed, hash_str("lgdm_train")));
    const std::uint64_t chash = config_hash(cfg);
    const fs::path ckpt_dir = out_dir / "lgdm-ckpt";

    LgdmTrainResult res;
    res.ckpt_dir = ckpt_dir;
    fs::create_directories(out_dir);
    bool have_ckpt = false;
    for (int step = 1; step <= cfg.lgdm_steps; ++step) {
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(prep.size()) - 1));
        const auto& p = prep[idx];
        const int t = rng.uniform_int(1, cfg.T);
        const Tensor<float> eps = lgdm::sample_noise<float>(p.x0.shape(), rng);
        const Tensor<float> x_t = lgdm::q_sample(p.x0, t, eps, sched);

        ad::Tape<float> tape;
        auto cond = enc.forward(tape, tape.constant(p.lum));
        auto eps_hat = den.forward(tape, tape.constant(x_t), cond, t);
        auto l_den = ad::denoise_loss(tape, eps_hat, tape.constant(eps));

        // differentiable x0_hat = clamp((x_t - sqrt(1-abar) eps_hat)/sqrt(abar))
        const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
        auto x0_hat = tape.clamp(
            tape.scale(tape.sub(tape.constant(x_t), tape.scale(eps_hat, std::sqrt(1.0 - ab))),
                       1.0 / std::sqrt(ab)),
            -1.0, 2.0);
        auto l_dts = ad::dts_loss(tape, x0_hat, tape.constant(p.clean), t, sched, dts);
        auto loss = tape.add(l_den, l_dts);

        const double lv = static_cast<double>(loss->val[0]);
        if (!std::isfinite(lv)) {
            if (have_ckpt)
                std::cerr << "train_lgdm: NaN loss at step " << step << "; last checkpoint kept at " << ckpt_dir
                          << "\n";
            throw numeric_error("train_lgdm: non-finite loss at step " + std::to_string(step));
        }
        store.zero_grad();
        tape.backward(loss);
        const double lr = cosine_lr(cfg.lgdm_lr, step - 1, cfg.lgdm_steps);
        opt.step(lr);
        if (!store.values_finite())
            throw numeric_error("train_lgdm: non-finite parameters after step " + std::to_string(step));
        lgdm::ema_update(shadow, store, cfg.ema_decay);
        res.history.push_back({step, lv, lr});
        if (step % cfg.ckpt_every == 0 || step == cfg.lgdm_steps) {
            save_checkpoint(ckpt_dir, store, CheckpointMeta{step, chash});
            save_checkpoint(ckpt_dir / "ema", shadow, CheckpointMeta{step, chash});
            have_ckpt = true;
        }
    }
    save_history(res.history, out_dir / "lgdm-history.json", "lgdm", chash);
    return res;
}

}  // namespace lcdiff
