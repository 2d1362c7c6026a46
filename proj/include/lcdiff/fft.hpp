#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

namespace lcdiff::fft {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place 1D transform, stride-1 buffer of length n. Radix-2 for powers of two,
// O(n^2) direct evaluation otherwise (line lengths here are tiny). The inverse
// carries the 1/n factor.
template <typename T>
void transform_1d(std::complex<T>* a, int n, bool inverse) {
    using C = std::complex<T>;
    const T sign = inverse ? T(1) : T(-1);
    if (is_pow2(n)) {
        for (int i = 1, j = 0; i < n; ++i) {  // bit-reversal permutation
            int bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(a[i], a[j]);
        }
        for (int len = 2; len <= n; len <<= 1) {
            const double ang = sign * 2.0 * 3.14159265358979323846264338327950288 / len;
            const C wlen(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
            for (int i = 0; i < n; i += len) {
                C w(1);
                for (int k = 0; k < len / 2; ++k) {
                    C u = a[i + k];
                    C v = a[i + k + len / 2] * w;
                    a[i + k] = u + v;
                    a[i + k + len / 2] = u - v;
                    w *= wlen;
                }
            }
        }
    } else {
        std::vector<C> out(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            C acc(0);
            for (int m = 0; m < n; ++m) {
                const double ang = sign * 2.0 * 3.14159265358979323846264338327950288 * k * m / n;
                acc += a[m] * C(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
            }
            out[static_cast<std::size_t>(k)] = acc;
        }
        for (int k = 0; k < n; ++k) a[k] = out[static_cast<std::size_t>(k)];
    }
    if (inverse) {
        const T inv = T(1) / static_cast<T>(n);
        for (int i = 0; i < n; ++i) a[i] *= inv;
    }
}

// 2D transform over a row-major h x w buffer.
template <typename T>
void transform_2d(std::complex<T>* a, int h, int w, bool inverse) {
    for (int y = 0; y < h; ++y) transform_1d(a + static_cast<std::size_t>(y) * w, w, inverse);
    std::vector<std::complex<T>> col(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = a[static_cast<std::size_t>(y) * w + x];
        transform_1d(col.data(), h, inverse);
        for (int y = 0; y < h; ++y) a[static_cast<std::size_t>(y) * w + x] = col[static_cast<std::size_t>(y)];
    }
}

}  // namespace lcdiff::fft
