#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lcdiff/fft.hpp"
#include "lcdiff/tensor.hpp"

namespace lcdiff::freqlab {

// Complementary binary masks over the (unshifted) 2D spectrum of an h x w map.
// A bin is low iff its radial distance from DC is <= cutoff_ratio * min(h,w)/2,
// measured with signed frequencies, so low + high = 1 exactly and the masks are
// symmetric under frequency negation (real input stays real after masking).
struct SpectralMaskPair {
    Tensor<uint8_t> low;   // {H, W}
    Tensor<uint8_t> high;  // {H, W}
    double cutoff_ratio = 0.25;

    int height() const { return low.dim(0); }
    int width() const { return low.dim(1); }
};

inline SpectralMaskPair make_masks(int h, int w, double cutoff_ratio) {
    if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("make_masks: dims must be even and >= 2, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    if (!(cutoff_ratio > 0.0 && cutoff_ratio < 1.0))
        throw std::invalid_argument("make_masks: cutoff_ratio must be in (0,1)");
    SpectralMaskPair m;
    m.cutoff_ratio = cutoff_ratio;
    m.low = Tensor<uint8_t>({h, w});
    m.high = Tensor<uint8_t>({h, w});
    const double radius = cutoff_ratio * std::min(h, w) / 2.0;
    for (int i = 0; i < h; ++i) {
        const int fi = i <= h / 2 ? i : i - h;  // signed frequency, Nyquist at -h/2
        for (int j = 0; j < w; ++j) {
            const int fj = j <= w / 2 ? j : j - w;
            const bool is_low = std::hypot(static_cast<double>(fi), static_cast<double>(fj)) <= radius;
            m.low.at(i, j) = is_low ? 1 : 0;
            m.high.at(i, j) = is_low ? 0 : 1;
        }
    }
    return m;
}

template <typename T>
struct FrequencyPairT {
    Tensor<T> low;
    Tensor<T> high;
};
using FrequencyPair = FrequencyPairT<double>;

namespace detail {

// Apply one of the masks in the spectrum domain to a single-channel map; the
// full operator F^-1 M F is self-adjoint, which the autodiff layer relies on.
template <typename T>
void mask_filter_plane(const T* src, T* dst, int h, int w, const Tensor<uint8_t>& mask) {
    std::vector<std::complex<T>> buf(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = std::complex<T>(src[i], 0);
    fft::transform_2d(buf.data(), h, w, false);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (!mask.at(i, j)) buf[static_cast<std::size_t>(i) * w + j] = std::complex<T>(0, 0);
    fft::transform_2d(buf.data(), h, w, true);
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = buf[i].real();
}

}  // namespace detail

// Per-channel filter through one mask; map is {H,W} or {H,W,C}.
template <typename T>
Tensor<T> mask_filter(const Tensor<T>& map, const SpectralMaskPair& masks, bool low) {
    const int h = map.dim(0), w = map.dim(1);
    if (h != masks.height() || w != masks.width())
        throw std::invalid_argument("mask_filter: map " + shape_str(map) + " does not match masks " +
                                    std::to_string(masks.height()) + "x" + std::to_string(masks.width()));
    const int c = map.ndim() == 3 ? map.dim(2) : 1;
    const Tensor<uint8_t>& mask = low ? masks.low : masks.high;
    Tensor<T> out(map.shape());
    std::vector<T> plane(static_cast<std::size_t>(h) * w), filtered(static_cast<std::size_t>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                plane[static_cast<std::size_t>(i) * w + j] = map[(static_cast<std::size_t>(i) * w + j) * c + ch];
        detail::mask_filter_plane(plane.data(), filtered.data(), h, w, mask);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out[(static_cast<std::size_t>(i) * w + j) * c + ch] = filtered[static_cast<std::size_t>(i) * w + j];
    }
    return out;
}

// X_l = F^-1(M_l . F x), X_h = F^-1(M_h . F x); low + high reconstructs the
// input within 1e-5 by mask complementarity.
template <typename T>
FrequencyPairT<T> split_frequency(const Tensor<T>& map, const SpectralMaskPair& masks) {
    if (map.ndim() != 2 && map.ndim() != 3)
        throw std::invalid_argument("split_frequency: expected a 2D or 3D map, got " + shape_str(map));
    FrequencyPairT<T> out;
    out.low = mask_filter(map, masks, true);
    out.high = mask_filter(map, masks, false);
    return out;
}

template <typename T>
struct WaveletBandsT {
    Tensor<T> ll, lh, hl, hh;  // each {H/2, W/2} or {H/2, W/2, C}
};
using WaveletBands = WaveletBandsT<double>;

// Single-level orthonormal 2D Haar. Per 2x2 block (a b; c d):
//   ll=(a+b+c+d)/2, lh=(a-b+c-d)/2, hl=(a+b-c-d)/2, hh=(a-b-c+d)/2.
template <typename T>
WaveletBandsT<T> haar_dwt(const Tensor<T>& map) {
    if (map.ndim() != 2 && map.ndim() != 3)
        throw std::invalid_argument("haar_dwt: expected a 2D or 3D map, got " + shape_str(map));
    const int h = map.dim(0), w = map.dim(1);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("haar_dwt: dims must be even, got " + shape_str(map));
    const int c = map.ndim() == 3 ? map.dim(2) : 1;
    std::vector<int> bshape = map.ndim() == 3 ? std::vector<int>{h / 2, w / 2, c}
                                              : std::vector<int>{h / 2, w / 2};
    WaveletBandsT<T> out{Tensor<T>(bshape), Tensor<T>(bshape), Tensor<T>(bshape), Tensor<T>(bshape)};
    const T half = T(0.5);
    for (int i = 0; i < h / 2; ++i) {
        for (int j = 0; j < w / 2; ++j) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t base = (static_cast<std::size_t>(2 * i) * w + 2 * j) * c + ch;
                const T a = map[base];
                const T b = map[base + c];
                const T cc = map[base + static_cast<std::size_t>(w) * c];
                const T d = map[base + static_cast<std::size_t>(w) * c + c];
                const std::size_t o = (static_cast<std::size_t>(i) * (w / 2) + j) * c + ch;
                out.ll[o] = (a + b + cc + d) * half;
                out.lh[o] = (a - b + cc - d) * half;
                out.hl[o] = (a + b - cc - d) * half;
                out.hh[o] = (a - b - cc + d) * half;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> haar_idwt(const WaveletBandsT<T>& bands) {
    const auto& s = bands.ll.shape();
    if (!bands.lh.same_shape(bands.ll) || !bands.hl.same_shape(bands.ll) || !bands.hh.same_shape(bands.ll))
        throw std::invalid_argument("haar_idwt: band shapes differ");
    const int hh = s[0], hw = s[1];
    const int c = bands.ll.ndim() == 3 ? s[2] : 1;
    std::vector<int> oshape = bands.ll.ndim() == 3 ? std::vector<int>{2 * hh, 2 * hw, c}
                                                   : std::vector<int>{2 * hh, 2 * hw};
    Tensor<T> out(oshape);
    const int w = 2 * hw;
    const T half = T(0.5);
    for (int i = 0; i < hh; ++i) {
        for (int j = 0; j < hw; ++j) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t o = (static_cast<std::size_t>(i) * hw + j) * c + ch;
                const T ll = bands.ll[o], lh = bands.lh[o], hl = bands.hl[o], hhv = bands.hh[o];
                const std::size_t base = (static_cast<std::size_t>(2 * i) * w + 2 * j) * c + ch;
                out[base] = (ll + lh + hl + hhv) * half;
                out[base + c] = (ll - lh + hl - hhv) * half;
                out[base + static_cast<std::size_t>(w) * c] = (ll + lh - hl - hhv) * half;
                out[base + static_cast<std::size_t>(w) * c + c] = (ll - lh - hl + hhv) * half;
            }
        }
    }
    return out;
}

}  // namespace lcdiff::freqlab
