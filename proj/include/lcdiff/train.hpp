#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcdiff/autodiff.hpp"
#include "lcdiff/checkpoint.hpp"
#include "lcdiff/colorlab.hpp"
#include "lcdiff/config.hpp"
#include "lcdiff/weathersim.hpp"

namespace lcdiff {

double cosine_lr(double base, std::int64_t step, std::int64_t total, double floor = 1e-7);

// Adam over every entry of a ParamStore, driven by the accumulated grads.
class Adam {
public:
    explicit Adam(ad::ParamStore<float>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(double lr);

private:
    ad::ParamStore<float>* store_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

struct TrainSample {
    std::string name;
    Tensor<float> lum_deg, chrom_deg;      // degraded YCbCr
    Tensor<float> lum_clean, chrom_clean;  // target YCbCr
    std::string kind;
};

// Loads every manifest pair as float YCbCr tensors (desk scale: all in memory).
std::vector<TrainSample> load_pairs(const std::filesystem::path& manifest_path);

struct HistoryPoint {
    std::int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

void save_history(const std::vector<HistoryPoint>& h, const std::filesystem::path& path,
                  const std::string& label, std::uint64_t config_hash);

struct LcdnTrainResult {
    std::filesystem::path ckpt_dir;
    std::vector<HistoryPoint> history;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Joint LRM+FCRM training with L_res on the recomposed YCbCr prediction.
// Saves checkpoints under out_dir/lcdn-ckpt; NaN loss aborts with the last
// good checkpoint retained (numeric_error).
LcdnTrainResult train_lcdn(const std::filesystem::path& manifest_path, const RunConfig& cfg,
                           const std::filesystem::path& out_dir);

struct LgdmTrainResult {
    std::filesystem::path ckpt_dir;  // raw weights; EMA shadow in ckpt_dir/"ema"
    std::vector<HistoryPoint> history;
};

// Conditional denoiser training (L_denoise + L_dts) with the condition taken
// from a frozen LCDN checkpoint; maintains an EMA shadow.
LgdmTrainResult train_lgdm(const std::filesystem::path& manifest_path, const std::filesystem::path& lcdn_ckpt,
                           const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace lcdiff
