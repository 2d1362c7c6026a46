#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcdiff/lcdn.hpp"
#include "lcdiff/lgdm.hpp"
#include "lcdiff/losses.hpp"

namespace CLI {
class App;
}

namespace lcdiff {

// Everything a run needs, loadable from a TOML file; unknown keys are
// rejected at parse time and the hash of the effective values is embedded in
// checkpoints and reports.
struct RunConfig {
    // data
    std::string data_dir = "data";
    int image_size = 64;
    int n_scenes = 8;
    std::vector<std::string> kinds;  // empty = all seven
    std::vector<int> severities = {3};

    // lcdn
    int lcdn_width = 16;
    int lcdn_blocks = 4;
    double cutoff_ratio = 0.25;
    int fcrm_width = 16;
    int fcrm_tokens = 8;
    int fcrm_reduction = 4;
    int fcrm_kernel = 7;
    double loss_eta = 1.0;
    double loss_theta = 0.5;
    double loss_lambda = 0.1;
    int lcdn_steps = 2000;
    double lcdn_lr = 2e-4;

    // lgdm
    int T = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int tau = -1;  // -1 = T/2
    int ddim_steps = 10;
    double eta_ddim = 0.0;
    double dts_k = 5.0;
    double ema_decay = 0.995;
    int den_width = 16;
    int den_emb = 32;
    std::string cond_mode = "identity";  // or "conv"
    int cond_channels = 16;
    std::string lgdm_target = "clean";  // or "coarse"
    int lgdm_steps = 5000;
    double lgdm_lr = 2e-4;

    // run
    std::uint64_t seed = 42;
    int ckpt_every = 500;
    std::string device = "cpu";

    int effective_tau() const { return tau < 0 ? T / 2 : tau; }
    std::vector<std::string> effective_kinds() const;
    void validate() const;  // throws std::invalid_argument with the offending key

    lcdn::LcdnConfig lcdn_config() const;
    lgdm::DenoiserConfig denoiser_config() const;
    LossWeights loss_weights() const;
    DtsConfig dts_config() const;
};

// Registers every field as a --key option (TOML key = option name).
void bind_config(CLI::App& app, RunConfig& cfg);

// Canonical key=value serialization of the effective config.
std::string config_canonical(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);

}  // namespace lcdiff
