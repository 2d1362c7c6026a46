#include <doctest.h>

#include <cmath>
#include <limits>

#include "lcdiff/colorlab.hpp"
#include "testutil.hpp"

using namespace lcdiff;
using colorlab::YCbCrImage;

namespace {

Image solid(double r, double g, double b, int h = 4, int w = 4) {
    Image img;
    img.pix = Tensor<double>({h, w, 3});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            img.pix.at(i, j, 0) = r;
            img.pix.at(i, j, 1) = g;
            img.pix.at(i, j, 2) = b;
        }
    return img;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("rgb_to_ycbcr maps primaries to known coordinates") {
    auto white = colorlab::rgb_to_ycbcr(solid(1, 1, 1));
    CHECK(white.lum.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(white.chrom.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(white.chrom.at(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    auto black = colorlab::rgb_to_ycbcr(solid(0, 0, 0));
    CHECK(black.lum.at(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(black.chrom.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(black.chrom.at(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    auto red = colorlab::rgb_to_ycbcr(solid(1, 0, 0));
    CHECK(red.lum.at(0, 0, 0) == doctest::Approx(0.299).epsilon(1e-12));
    CHECK(red.chrom.at(0, 0, 0) == doctest::Approx(0.5 - 0.168736).epsilon(1e-12));
    CHECK(red.chrom.at(0, 0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("achromatic pixels carry chroma exactly 0.5") {
    for (double v : {0.0, 0.125, 0.25, 0.5, 0.73, 1.0}) {
        auto ycc = colorlab::rgb_to_ycbcr(solid(v, v, v));
        for (std::size_t i = 0; i < ycc.chrom.size(); ++i) CHECK(ycc.chrom[i] == 0.5);
    }
}

TEST_CASE("ycbcr_to_rgb inverts the known coordinates") {
    YCbCrImage ycc;
    ycc.lum = Tensor<double>({2, 2, 1}, 1.0);
    ycc.chrom = Tensor<double>({2, 2, 2}, 0.5);
    Image rgb = colorlab::ycbcr_to_rgb(ycc);
    for (std::size_t i = 0; i < rgb.pix.size(); ++i) CHECK(rgb.pix[i] == doctest::Approx(1.0).epsilon(1e-9));

    auto red_ycc = colorlab::rgb_to_ycbcr(solid(1, 0, 0, 2, 2));
    Image red = colorlab::ycbcr_to_rgb(red_ycc);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            CHECK(red.pix.at(i, j, 0) == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(red.pix.at(i, j, 1) == doctest::Approx(0.0).epsilon(1e-9));
            CHECK(red.pix.at(i, j, 2) == doctest::Approx(0.0).epsilon(1e-9));
        }
}

TEST_CASE("round trip over random in-gamut images stays under 1e-5") {
    Rng rng(7);
    double worst = 0.0;
    for (int n = 0; n < 50; ++n) {
        Image img = testutil::random_image(rng, 8, 10);
        Image back = colorlab::ycbcr_to_rgb(colorlab::rgb_to_ycbcr(img));
        worst = std::max(worst, max_abs_diff(img.pix, back.pix));
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("unclamped inverse passes out-of-gamut values through") {
    YCbCrImage ycc;
    ycc.lum = Tensor<double>({2, 2, 1}, 1.5);  // brighter than any in-gamut Y
    ycc.chrom = Tensor<double>({2, 2, 2}, 0.5);
    Image clamped = colorlab::ycbcr_to_rgb(ycc);
    Image raw = colorlab::ycbcr_to_rgb_unclamped(ycc);
    for (std::size_t i = 0; i < clamped.pix.size(); ++i) {
        CHECK(clamped.pix[i] == 1.0);
        CHECK(raw.pix[i] == doctest::Approx(1.5).epsilon(1e-12));
    }
}

TEST_CASE("rgb_to_ycbcr rejects non-finite input") {
    Image img = solid(0.5, 0.5, 0.5);
    img.pix.at(1, 1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(colorlab::rgb_to_ycbcr(img));
    img.pix.at(1, 1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS(colorlab::rgb_to_ycbcr(img));
}

TEST_CASE("ycbcr_to_rgb rejects mismatched lum/chrom shapes") {
    YCbCrImage ycc;
    ycc.lum = Tensor<double>({4, 4, 1}, 0.5);
    ycc.chrom = Tensor<double>({4, 6, 2}, 0.5);
    CHECK_THROWS(colorlab::ycbcr_to_rgb(ycc));
}

TEST_CASE("swap_luminance self-swap is the identity") {
    Rng rng(11);
    auto x = colorlab::rgb_to_ycbcr(testutil::random_image(rng, 6, 6));
    auto [a, b] = colorlab::swap_luminance(x, x);
    CHECK(max_abs_diff(a.lum, x.lum) == 0.0);
    CHECK(max_abs_diff(a.chrom, x.chrom) == 0.0);
    CHECK(max_abs_diff(b.lum, x.lum) == 0.0);
    CHECK(max_abs_diff(b.chrom, x.chrom) == 0.0);
}

TEST_CASE("swap_luminance is an involution and copies chroma bitwise") {
    Rng rng(13);
    auto a = colorlab::rgb_to_ycbcr(testutil::random_image(rng, 6, 8));
    auto b = colorlab::rgb_to_ycbcr(testutil::random_image(rng, 6, 8));
    auto [s1, s2] = colorlab::swap_luminance(a, b);
    // first keeps a's chroma with b's luminance, second the reverse
    CHECK(max_abs_diff(s1.chrom, a.chrom) == 0.0);
    CHECK(max_abs_diff(s1.lum, b.lum) == 0.0);
    CHECK(max_abs_diff(s2.chrom, b.chrom) == 0.0);
    CHECK(max_abs_diff(s2.lum, a.lum) == 0.0);
    auto [r1, r2] = colorlab::swap_luminance(s1, s2);
    CHECK(max_abs_diff(r1.lum, a.lum) == 0.0);
    CHECK(max_abs_diff(r1.chrom, a.chrom) == 0.0);
    CHECK(max_abs_diff(r2.lum, b.lum) == 0.0);
    CHECK(max_abs_diff(r2.chrom, b.chrom) == 0.0);
}

TEST_CASE("swap_luminance rejects dimension mismatch") {
    YCbCrImage a, b;
    a.lum = Tensor<double>({4, 4, 1});
    a.chrom = Tensor<double>({4, 4, 2});
    b.lum = Tensor<double>({4, 6, 1});
    b.chrom = Tensor<double>({4, 6, 2});
    CHECK_THROWS(colorlab::swap_luminance(a, b));
}

TEST_CASE("pack/split round-trips the 3-channel layout") {
    Rng rng(17);
    auto ycc = colorlab::rgb_to_ycbcr(testutil::random_image(rng, 6, 6));
    Tensor<double> packed = colorlab::pack_ycc(ycc);
    REQUIRE(packed.ndim() == 3);
    CHECK(packed.dim(2) == 3);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            CHECK(packed.at(i, j, 0) == ycc.lum.at(i, j, 0));
            CHECK(packed.at(i, j, 1) == ycc.chrom.at(i, j, 0));
            CHECK(packed.at(i, j, 2) == ycc.chrom.at(i, j, 1));
        }
    auto split = colorlab::split_ycc(packed);
    CHECK(max_abs_diff(split.lum, ycc.lum) == 0.0);
    CHECK(max_abs_diff(split.chrom, ycc.chrom) == 0.0);
}
