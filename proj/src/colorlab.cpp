#include "lcdiff/colorlab.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace lcdiff::colorlab {

namespace {

// Declared forward matrix; offsets (0, 0.5, 0.5) applied after.
constexpr std::array<std::array<double, 3>, 3> kFwd = {{
    {0.299, 0.587, 0.114},
    {-0.168736, -0.331264, 0.5},
    {0.5, -0.418688, -0.081312},
}};

std::array<std::array<double, 3>, 3> invert3(const std::array<std::array<double, 3>, 3>& m) {
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    std::array<std::array<double, 3>, 3> inv;
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return inv;
}

const std::array<std::array<double, 3>, 3>& inv_matrix() {
    static const auto inv = invert3(kFwd);
    return inv;
}

}  // namespace

YCbCrImage rgb_to_ycbcr(const Image& img) {
    if (!all_finite(img.pix))
        throw std::invalid_argument("rgb_to_ycbcr: non-finite input pixel");
    const int h = img.height(), w = img.width();
    YCbCrImage out{Tensor<double>({h, w, 1}), Tensor<double>({h, w, 2})};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            out.lum.at(y, x, 0) = kFwd[0][0] * r + kFwd[0][1] * g + kFwd[0][2] * b;
            out.chrom.at(y, x, 0) = kFwd[1][0] * r + kFwd[1][1] * g + kFwd[1][2] * b + 0.5;
            out.chrom.at(y, x, 1) = kFwd[2][0] * r + kFwd[2][1] * g + kFwd[2][2] * b + 0.5;
        }
    }
    return out;
}

namespace {

Image ycbcr_to_rgb_impl(const YCbCrImage& ycc, bool clamp) {
    if (ycc.lum.ndim() != 3 || ycc.chrom.ndim() != 3 || ycc.lum.dim(2) != 1 || ycc.chrom.dim(2) != 2 ||
        ycc.lum.dim(0) != ycc.chrom.dim(0) || ycc.lum.dim(1) != ycc.chrom.dim(1))
        throw std::invalid_argument("ycbcr_to_rgb: lum " + shape_str(ycc.lum) + " and chrom " +
                                    shape_str(ycc.chrom) + " shapes are incompatible");
    const auto& inv = inv_matrix();
    const int h = ycc.height(), w = ycc.width();
    Image out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double yy = ycc.lum.at(y, x, 0);
            const double cb = ycc.chrom.at(y, x, 0) - 0.5;
            const double cr = ycc.chrom.at(y, x, 1) - 0.5;
            for (int c = 0; c < 3; ++c) {
                double v = inv[c][0] * yy + inv[c][1] * cb + inv[c][2] * cr;
                if (clamp) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                out.at(y, x, c) = v;
            }
        }
    }
    return out;
}

}  // namespace

Image ycbcr_to_rgb(const YCbCrImage& ycc) { return ycbcr_to_rgb_impl(ycc, true); }

Image ycbcr_to_rgb_unclamped(const YCbCrImage& ycc) { return ycbcr_to_rgb_impl(ycc, false); }

std::pair<YCbCrImage, YCbCrImage> swap_luminance(const YCbCrImage& a, const YCbCrImage& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw std::invalid_argument("swap_luminance: dimension mismatch " + shape_str(a.lum) +
                                    " vs " + shape_str(b.lum));
    YCbCrImage first{b.lum, a.chrom};
    YCbCrImage second{a.lum, b.chrom};
    return {std::move(first), std::move(second)};
}

YCbCrImage split_ycc(const Tensor<double>& ycc3) {
    if (ycc3.ndim() != 3 || ycc3.dim(2) != 3)
        throw std::invalid_argument("split_ycc: expected {H,W,3}, got " + shape_str(ycc3));
    const int h = ycc3.dim(0), w = ycc3.dim(1);
    YCbCrImage out{Tensor<double>({h, w, 1}), Tensor<double>({h, w, 2})};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            out.lum.at(y, x, 0) = ycc3.at(y, x, 0);
            out.chrom.at(y, x, 0) = ycc3.at(y, x, 1);
            out.chrom.at(y, x, 1) = ycc3.at(y, x, 2);
        }
    return out;
}

Tensor<double> pack_ycc(const YCbCrImage& ycc) {
    const int h = ycc.height(), w = ycc.width();
    Tensor<double> out({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            out.at(y, x, 0) = ycc.lum.at(y, x, 0);
            out.at(y, x, 1) = ycc.chrom.at(y, x, 0);
            out.at(y, x, 2) = ycc.chrom.at(y, x, 1);
        }
    return out;
}

}  // namespace lcdiff::colorlab
