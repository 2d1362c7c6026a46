#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "lcdiff/checkpoint.hpp"
#include "lcdiff/colorlab.hpp"
#include "lcdiff/config.hpp"
#include "lcdiff/lcdn.hpp"
#include "lcdiff/lgdm.hpp"

namespace lcdiff {

// Frozen coarse restorer (LRM + FCRM) for inference.
class LcdnRuntime {
public:
    explicit LcdnRuntime(const RunConfig& cfg);
    CheckpointMeta load(const std::filesystem::path& ckpt_dir);

    colorlab::YCbCrImage restore(const colorlab::YCbCrImage& degraded) const;

    ad::ParamStore<float>& store() { return store_; }
    const lcdn::LcdnModel<float>& model() const { return *model_; }

private:
    ad::ParamStore<float> store_;
    std::unique_ptr<lcdn::LcdnModel<float>> model_;
};

// Frozen conditional denoiser + condition encoder + schedule.
class LgdmRuntime {
public:
    explicit LgdmRuntime(const RunConfig& cfg);

    // Loads ckpt_dir/ema when present (EMA weights are the eval weights),
    // otherwise ckpt_dir itself.
    CheckpointMeta load(const std::filesystem::path& ckpt_dir);

    Tensor<float> condition(const Tensor<float>& lum_restored) const;
    Tensor<float> eps(const Tensor<float>& x_t, const Tensor<float>& cond, int t) const;

    const lgdm::NoiseSchedule& schedule() const { return sched_; }
    ad::ParamStore<float>& store() { return store_; }
    const lgdm::DenoiserNet<float>& denoiser() const { return *den_; }
    const lgdm::ConditionEncoder<float>& encoder() const { return *enc_; }

private:
    ad::ParamStore<float> store_;
    std::unique_ptr<lgdm::DenoiserNet<float>> den_;
    std::unique_ptr<lgdm::ConditionEncoder<float>> enc_;
    lgdm::NoiseSchedule sched_;
};

// Whole pipeline on one RGB image: coarse LCDN restoration, then (when
// lgdm_rt is present and tau > 0) come-closer DDIM refinement, then RGB.
// tau == 0 returns the coarse output unchanged.
Image restore_image(const Image& degraded, const LcdnRuntime& lcdn_rt, const LgdmRuntime* lgdm_rt, int tau,
                    int ddim_steps, double eta_ddim, std::uint64_t seed);

}  // namespace lcdiff
