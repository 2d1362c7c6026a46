#pragma once

#include <utility>

#include "lcdiff/image.hpp"
#include "lcdiff/tensor.hpp"

namespace lcdiff::colorlab {

// Luminance map {H,W,1} plus chrominance map {H,W,2} (Cb, Cr), unit range,
// achromatic at 0.5.
struct YCbCrImage {
    Tensor<double> lum;
    Tensor<double> chrom;

    int height() const { return lum.dim(0); }
    int width() const { return lum.dim(1); }
};

// Full-range BT.601 (JPEG convention), applied pixelwise with no clamping:
//   Y  =  0.299 R + 0.587 G + 0.114 B
//   Cb = -0.168736 R - 0.331264 G + 0.5 B + 0.5
//   Cr =  0.5 R - 0.418688 G - 0.081312 B + 0.5
// Rejects non-finite input.
YCbCrImage rgb_to_ycbcr(const Image& img);

// Exact matrix inverse of rgb_to_ycbcr, then clamp to [0,1]. Composition with
// the forward transform is identity within 1e-5 on in-gamut inputs.
Image ycbcr_to_rgb(const YCbCrImage& ycc);

// Unclamped variant used mid-pipeline so losses see raw values.
Image ycbcr_to_rgb_unclamped(const YCbCrImage& ycc);

// Returns (a.chrom with b.lum, b.chrom with a.lum); inputs untouched, chroma
// arrays copied bitwise. An involution.
std::pair<YCbCrImage, YCbCrImage> swap_luminance(const YCbCrImage& a, const YCbCrImage& b);

// Repack a 3-channel YCbCr tensor {H,W,3} into the split representation and back.
YCbCrImage split_ycc(const Tensor<double>& ycc3);
Tensor<double> pack_ycc(const YCbCrImage& ycc);

}  // namespace lcdiff::colorlab
