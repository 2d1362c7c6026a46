#pragma once

#include <string>

#include "lcdiff/tensor.hpp"

namespace lcdiff {

// RGB image, values in [0,1], layout {H, W, 3}.
struct Image {
    Tensor<double> pix;

    Image() = default;
    Image(int h, int w) : pix(Tensor<double>({h, w, 3})) {}
    explicit Image(Tensor<double> p) : pix(std::move(p)) {
        if (pix.ndim() != 3 || pix.dim(2) != 3)
            throw std::invalid_argument("Image: expected {H,W,3}, got " + shape_str(pix));
    }

    int height() const { return pix.dim(0); }
    int width() const { return pix.dim(1); }
    double& at(int y, int x, int c) { return pix.at(y, x, c); }
    double at(int y, int x, int c) const { return pix.at(y, x, c); }
};

// Throws with a diagnostic when the Image contract is broken (finite values,
// H and W at least 8 and even).
void validate_image(const Image& img, const std::string& who);

Image clamp01(Image img);

// 8-bit PNG I/O. Decode maps [0,255] -> [0,1] by /255; encode rounds half-up.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

}  // namespace lcdiff
