#include "lcdiff/config.hpp"

#include <sstream>

#include <CLI11.hpp>

#include "lcdiff/rng.hpp"
#include "lcdiff/weathersim.hpp"

namespace lcdiff {

std::vector<std::string> RunConfig::effective_kinds() const {
    if (!kinds.empty()) return kinds;
    std::vector<std::string> all;
    for (auto k : weathersim::all_kinds()) all.push_back(weathersim::kind_name(k));
    return all;
}

void RunConfig::validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (image_size < 16 || image_size % 2) bad("image_size must be even and >= 16");
    if (n_scenes < 1) bad("n_scenes must be >= 1");
    for (int s : severities)
        if (s < 1 || s > 5) bad("severities entries must be in 1..5");
    for (const auto& k : effective_kinds()) weathersim::kind_from_name(k);  // throws on unknown
    if (lcdn_width < 2 || lcdn_blocks < 1) bad("lcdn_width >= 2 and lcdn_blocks >= 1");
    if (cutoff_ratio <= 0.0 || cutoff_ratio >= 1.0) bad("cutoff_ratio must be in (0,1)");
    if (fcrm_width < fcrm_reduction) bad("fcrm_width must be >= fcrm_reduction");
    if (fcrm_tokens < 1 || fcrm_kernel % 2 == 0) bad("fcrm_tokens >= 1 and fcrm_kernel odd");
    if (loss_eta < 0 || loss_theta < 0 || loss_lambda < 0) bad("loss weights must be nonnegative");
    if (lcdn_steps < 1 || lgdm_steps < 1) bad("step counts must be >= 1");
    if (lcdn_lr <= 0 || lgdm_lr <= 0) bad("learning rates must be positive");
    if (T < 2) bad("T must be >= 2");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0)) bad("need 0 < beta_start < beta_end < 1");
    if (tau > T) bad("tau must be <= T");
    if (ddim_steps < 1) bad("ddim_steps must be >= 1");
    if (effective_tau() > 0 && ddim_steps > effective_tau()) bad("ddim_steps must be <= tau");
    if (eta_ddim < 0) bad("eta_ddim must be >= 0");
    if (dts_k < 0) bad("dts_k must be >= 0");
    if (ema_decay < 0 || ema_decay > 1) bad("ema_decay must be in [0,1]");
    if (den_width < 2 || den_emb < 2 || den_emb % 2) bad("den_width >= 2, den_emb even and >= 2");
    if (cond_mode != "identity" && cond_mode != "conv") bad("cond_mode must be identity or conv");
    if (cond_channels < 1) bad("cond_channels must be >= 1");
    if (lgdm_target != "clean" && lgdm_target != "coarse") bad("lgdm_target must be clean or coarse");
    if (ckpt_every < 1) bad("ckpt_every must be >= 1");
}

lcdn::LcdnConfig RunConfig::lcdn_config() const {
    lcdn::LcdnConfig c;
    c.height = image_size;
    c.width = image_size;
    c.cutoff_ratio = cutoff_ratio;
    c.lrm.width = lcdn_width;
    c.lrm.blocks = lcdn_blocks;
    c.fcrm.width = fcrm_width;
    c.fcrm.tokens = fcrm_tokens;
    c.fcrm.reduction = fcrm_reduction;
    c.fcrm.spatial_kernel = fcrm_kernel;
    return c;
}

lgdm::DenoiserConfig RunConfig::denoiser_config() const {
    lgdm::DenoiserConfig c;
    c.width = den_width;
    c.emb = den_emb;
    c.cond_channels = cond_mode == "identity" ? 1 : cond_channels;
    return c;
}

LossWeights RunConfig::loss_weights() const { return LossWeights{loss_eta, loss_theta, loss_lambda}; }

DtsConfig RunConfig::dts_config() const { return DtsConfig{dts_k}; }

void bind_config(CLI::App& app, RunConfig& cfg) {
    app.add_option("--data-dir", cfg.data_dir, "dataset root directory");
    app.add_option("--image-size", cfg.image_size, "toy scene / training patch size");
    app.add_option("--n-scenes", cfg.n_scenes, "number of toy scenes to synthesize");
    app.add_option("--kinds", cfg.kinds, "weather kinds (default: all seven)");
    app.add_option("--severities", cfg.severities, "severity levels 1..5");

    app.add_option("--lcdn-width", cfg.lcdn_width, "LRM feature width");
    app.add_option("--lcdn-blocks", cfg.lcdn_blocks, "LRM block count");
    app.add_option("--cutoff-ratio", cfg.cutoff_ratio, "spectral split cutoff ratio");
    app.add_option("--fcrm-width", cfg.fcrm_width, "FCRM lifted feature width");
    app.add_option("--fcrm-tokens", cfg.fcrm_tokens, "FCRM attention tokens");
    app.add_option("--fcrm-reduction", cfg.fcrm_reduction, "FCRM channel-gate reduction ratio");
    app.add_option("--fcrm-kernel", cfg.fcrm_kernel, "FCRM spatial-gate kernel size");
    app.add_option("--loss-eta", cfg.loss_eta, "L1 weight in L_res");
    app.add_option("--loss-theta", cfg.loss_theta, "SSIM weight in L_res");
    app.add_option("--loss-lambda", cfg.loss_lambda, "FFT weight in L_res");
    app.add_option("--lcdn-steps", cfg.lcdn_steps, "LCDN training steps");
    app.add_option("--lcdn-lr", cfg.lcdn_lr, "LCDN learning rate");

    app.add_option("--T", cfg.T, "diffusion step count");
    app.add_option("--beta-start", cfg.beta_start, "schedule start");
    app.add_option("--beta-end", cfg.beta_end, "schedule end");
    app.add_option("--tau", cfg.tau, "come-closer start step (-1 = T/2)");
    app.add_option("--ddim-steps", cfg.ddim_steps, "DDIM sampling steps");
    app.add_option("--eta-ddim", cfg.eta_ddim, "DDIM stochasticity");
    app.add_option("--dts-k", cfg.dts_k, "dynamic time-step weight k");
    app.add_option("--ema-decay", cfg.ema_decay, "EMA decay");
    app.add_option("--den-width", cfg.den_width, "denoiser width");
    app.add_option("--den-emb", cfg.den_emb, "time embedding length");
    app.add_option("--cond-mode", cfg.cond_mode, "condition encoder: identity|conv");
    app.add_option("--cond-channels", cfg.cond_channels, "condition channels for conv mode");
    app.add_option("--lgdm-target", cfg.lgdm_target, "diffusion target: clean|coarse");
    app.add_option("--lgdm-steps", cfg.lgdm_steps, "LGDM training steps");
    app.add_option("--lgdm-lr", cfg.lgdm_lr, "LGDM learning rate");

    app.add_option("--seed", cfg.seed, "master seed");
    app.add_option("--ckpt-every", cfg.ckpt_every, "checkpoint interval (steps)");
    app.add_option("--device", cfg.device, "compute device (cpu)");
}

std::string config_canonical(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "beta_end=" << c.beta_end << "\n";
    os << "beta_start=" << c.beta_start << "\n";
    os << "ckpt_every=" << c.ckpt_every << "\n";
    os << "cond_channels=" << c.cond_channels << "\n";
    os << "cond_mode=" << c.cond_mode << "\n";
    os << "cutoff_ratio=" << c.cutoff_ratio << "\n";
    os << "data_dir=" << c.data_dir << "\n";
    os << "ddim_steps=" << c.ddim_steps << "\n";
    os << "den_emb=" << c.den_emb << "\n";
    os << "den_width=" << c.den_width << "\n";
    os << "device=" << c.device << "\n";
    os << "dts_k=" << c.dts_k << "\n";
    os << "ema_decay=" << c.ema_decay << "\n";
    os << "eta_ddim=" << c.eta_ddim << "\n";
    os << "fcrm_kernel=" << c.fcrm_kernel << "\n";
    os << "fcrm_reduction=" << c.fcrm_reduction << "\n";
    os << "fcrm_tokens=" << c.fcrm_tokens << "\n";
    os << "fcrm_width=" << c.fcrm_width << "\n";
    os << "image_size=" << c.image_size << "\n";
    os << "kinds=";
    for (const auto& k : c.effective_kinds()) os << k << ",";
    os << "\n";
    os << "lcdn_blocks=" << c.lcdn_blocks << "\n";
    os << "lcdn_lr=" << c.lcdn_lr << "\n";
    os << "lcdn_steps=" << c.lcdn_steps << "\n";
    os << "lcdn_width=" << c.lcdn_width << "\n";
    os << "lgdm_lr=" << c.lgdm_lr << "\n";
    os << "lgdm_steps=" << c.lgdm_steps << "\n";
    os << "lgdm_target=" << c.lgdm_target << "\n";
    os << "loss_eta=" << c.loss_eta << "\n";
    os << "loss_lambda=" << c.loss_lambda << "\n";
    os << "loss_theta=" << c.loss_theta << "\n";
    os << "n_scenes=" << c.n_scenes << "\n";
    os << "seed=" << c.seed << "\n";
    os << "severities=";
    for (int s : c.severities) os << s << ",";
    os << "\n";
    os << "T=" << c.T << "\n";
    os << "tau=" << c.effective_tau() << "\n";
    return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) { return hash_str(config_canonical(cfg)); }

std::string config_hash_hex(const RunConfig& cfg) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << config_hash(cfg);
    return os.str();
}

}  // namespace lcdiff
