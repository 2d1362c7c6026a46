#include "lcdiff/pipeline.hpp"

#include "lcdiff/rng.hpp"

namespace lcdiff {

LcdnRuntime::LcdnRuntime(const RunConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, hash_str("lcdn_init")));
    model_ = std::make_unique<lcdn::LcdnModel<float>>(store_, cfg.lcdn_config(), rng);
}

CheckpointMeta LcdnRuntime::load(const std::filesystem::path& ckpt_dir) {
    return load_checkpoint(ckpt_dir, store_);
}

colorlab::YCbCrImage LcdnRuntime::restore(const colorlab::YCbCrImage& degraded) const {
    ad::Tape<float> tape;
    auto out = model_->forward(tape, degraded.lum.cast<float>(), degraded.chrom.cast<float>());
    colorlab::YCbCrImage r;
    r.lum = out.lum->val.cast<double>();
    r.chrom = out.chrom->val.cast<double>();
    return r;
}

LgdmRuntime::LgdmRuntime(const RunConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, hash_str("lgdm_init")));
    den_ = std::make_unique<lgdm::DenoiserNet<float>>(store_, cfg.denoiser_config(), rng);
    enc_ = std::make_unique<lgdm::ConditionEncoder<float>>(store_, cfg.cond_mode,
                                                           cfg.cond_mode == "identity" ? 1 : cfg.cond_channels, rng);
    sched_ = lgdm::make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

CheckpointMeta LgdmRuntime::load(const std::filesystem::path& ckpt_dir) {
    const auto ema = ckpt_dir / "ema";
    return load_checkpoint(is_checkpoint_dir(ema) ? ema : ckpt_dir, store_);
}

Tensor<float> LgdmRuntime::condition(const Tensor<float>& lum_restored) const {
    ad::Tape<float> tape;
    return enc_->forward(tape, tape.constant(lum_restored))->val;
}

Tensor<float> LgdmRuntime::eps(const Tensor<float>& x_t, const Tensor<float>& cond, int t) const {
    ad::Tape<float> tape;
    return den_->forward(tape, tape.constant(x_t), tape.constant(cond), t)->val;
}

Image restore_image(const Image& degraded, const LcdnRuntime& lcdn_rt, const LgdmRuntime* lgdm_rt, int tau,
                    int ddim_steps, double eta_ddim, std::uint64_t seed) {
    validate_image(degraded, "restore_image");
    const colorlab::YCbCrImage ycc = colorlab::rgb_to_ycbcr(degraded);
    colorlab::YCbCrImage coarse = lcdn_rt.restore(ycc);
    if (!lgdm_rt || tau == 0) return colorlab::ycbcr_to_rgb(coarse);

    const Tensor<float> x0 = colorlab::pack_ycc(coarse).cast<float>();
    const Tensor<float> cond = lgdm_rt->condition(coarse.lum.cast<float>());
    auto eps_fn = [&](const Tensor<float>& x_t, int t) { return lgdm_rt->eps(x_t, cond, t); };
    const Tensor<float> refined =
        lgdm::ddim_sample(eps_fn, x0, tau, lgdm_rt->schedule(), ddim_steps, eta_ddim, seed);
    return colorlab::ycbcr_to_rgb(colorlab::split_ycc(refined.cast<double>()));
}

}  // namespace lcdiff
