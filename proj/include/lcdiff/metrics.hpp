#pragma once

#include <map>
#include <string>
#include <vector>

#include "lcdiff/image.hpp"
#include "lcdiff/tensor.hpp"

namespace lcdiff::metrics {

// 10*log10(peak^2 / MSE); returns +inf when MSE == 0 (reports cap it at 100 dB).
double psnr(const Image& a, const Image& b, double peak = 1.0);
double psnr_map(const Tensor<double>& a, const Tensor<double>& b, double peak = 1.0);

inline double cap_psnr(double db) { return db > 100.0 ? 100.0 : db; }

// SSIM with an 11x11 Gaussian window (sigma 1.5), C1=(0.01*peak)^2,
// C2=(0.03*peak)^2, averaged over valid window positions; multi-channel maps
// are scored per channel and averaged. Rejects maps smaller than the window.
double ssim(const Tensor<double>& a, const Tensor<double>& b, double peak = 1.0);
double ssim(const Image& a, const Image& b, double peak = 1.0);

// The normalized 1D window behind ssim(); shared with the differentiable
// SSIM used by the training losses so reports and losses agree.
const std::vector<double>& ssim_window();  // size 11, sums to 1

struct PairScore {
    std::string name;
    std::string kind;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct KindStats {
    double psnr_db = 0.0;
    double ssim = 0.0;
    int n = 0;
};

struct MetricReport {
    double psnr_db = 0.0;  // arithmetic mean over images, PSNR capped at 100
    double ssim = 0.0;
    int n_images = 0;
    std::map<std::string, KindStats> per_kind;
    std::vector<PairScore> per_image;
    std::vector<std::string> warnings;  // missing pairs, listed and excluded
};

// Scores every manifest entry whose restored image exists under restored_dir
// (matched by the degraded file's basename). Missing files are warned about and
// excluded; an empty result set is an error.
MetricReport evaluate(const std::string& restored_dir, const std::string& clean_manifest);

std::string report_to_json(const MetricReport& r);
std::string report_to_text(const MetricReport& r);

}  // namespace lcdiff::metrics
