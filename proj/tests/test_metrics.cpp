#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "dewarp/metrics.hpp"
#include "dewarp/synthdoc.hpp"

using namespace dewarp;

namespace {

Raster subimage(const Raster& src, int y0, int x0, int size) {
    Raster out(size, size, src.channels);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < src.channels; ++c)
                out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
    return out;
}

Raster add_noise(const Raster& src, double amp, std::uint64_t seed) {
    Raster out = src;
    Rng rng(seed);
    for (double& v : out.data) v = clamp(v + rng.uniform(-amp, amp), 0.0, 1.0);
    return out;
}

}  // namespace

TEST_CASE("ms_ssim of an image with itself is one") {
    Raster img = value_noise_texture(192, 192, 1, 4);
    CHECK(ms_ssim(img, img, 5) == Catch::Approx(1.0).margin(1e-12));
    CHECK(ms_ssim(img, img, 1) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("ms_ssim decreases with noise amplitude") {
    Raster img = value_noise_texture(192, 192, 1, 9);
    double clean = ms_ssim(img, add_noise(img, 0.03, 1), 5);
    double noisy = ms_ssim(img, add_noise(img, 0.12, 1), 5);
    CHECK(clean < 1.0);
    CHECK(noisy < clean);
    CHECK(noisy > 0.0);
}

TEST_CASE("ms_ssim guards") {
    Raster img = value_noise_texture(64, 64, 1, 4);
    CHECK_THROWS_AS(ms_ssim(img, value_noise_texture(64, 63, 1, 4), 1), invalid_argument);
    CHECK_THROWS_AS(ms_ssim(img, img, 0), invalid_argument);
    CHECK_THROWS_AS(ms_ssim(img, img, 6), invalid_argument);
    CHECK_THROWS_AS(ms_ssim(img, img, 5), invalid_argument);  // 64 < 11 << 4
    CHECK_NOTHROW(ms_ssim(img, img, 3));
}

TEST_CASE("local_distortion converts the offset to pixels") {
    DeformationField gt = DeformationField::identity(65, 33);
    DeformationField pred = gt;
    for (Vec2& v : pred.coords) v.x += 0.1;
    CHECK(local_distortion(pred, gt) == Catch::Approx(3.2).margin(1e-9));
    CHECK(local_distortion(gt, gt) == 0.0);
    CHECK_THROWS_AS(local_distortion(gt, DeformationField::identity(64, 33)),
                    invalid_argument);
}

TEST_CASE("aligned distortion is zero for identical images") {
    Raster img = value_noise_texture(64, 64, 1, 31);
    AlignedDistortionResult r = aligned_distortion_full(img, img);
    CHECK(r.residual == 0.0);
    CHECK(r.value <= 1e-12);
    CHECK(r.best_scale == 1.0);
    CHECK(r.best_shift.x == 0.0);
    CHECK(r.best_shift.y == 0.0);
}

TEST_CASE("aligned distortion absorbs an integer translation") {
    Raster big = value_noise_texture(96, 96, 1, 8);
    Raster ref = subimage(big, 16, 16, 64);
    Raster img = subimage(big, 14, 19, 64);  // ref(y,x) == img(y+2, x-3)
    AlignedDistortionResult r = aligned_distortion_full(ref, img);
    CHECK(r.value <= 1e-9);
    CHECK(r.best_scale == 1.0);
    CHECK(r.best_shift.x == -3.0);
    CHECK(r.best_shift.y == 2.0);
}

TEST_CASE("aligned distortion recovers a mild zoom") {
    Raster ref = value_noise_texture(64, 64, 1, 12);
    // Magnify by 1.05 about the center; the search undoes it at s = 1.05.
    Raster img(64, 64, 1);
    double c = 31.5;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            img.at(y, x) = bilinear_at(ref, 0, c + (x - c) / 1.05, c + (y - c) / 1.05);
    AlignedDistortionResult r = aligned_distortion_full(ref, img);
    CHECK(std::abs(r.best_scale - 1.05) <= 0.015);
    double unaligned = aligned_distortion_full(ref, add_noise(ref, 0.2, 3)).value;
    CHECK(r.value < unaligned);
}

TEST_CASE("aligned distortion guards") {
    Raster tiny = Raster::constant(32, 32, 1, 0.5);
    CHECK_THROWS_AS(aligned_distortion(tiny, tiny), invalid_argument);
    Raster a = value_noise_texture(64, 64, 1, 1);
    Raster bad = a;
    bad.at(0, 0) = 2.0;
    CHECK_THROWS_AS(aligned_distortion(a, bad), invalid_argument);
}

TEST_CASE("edit distance hand values and degenerate cases") {
    CHECK(edit_distance("kitten", "sitting") == 3);
    CHECK(edit_distance("", "abc") == 3);
    CHECK(edit_distance("abc", "") == 3);
    CHECK(edit_distance("", "") == 0);
    CHECK(edit_distance("flaw", "lawn") == 2);
    CHECK(edit_distance("abcde", "abcde") == 0);
}

TEST_CASE("cer is edit distance over the reference length") {
    CHECK(cer("abc", "abc") == 0.0);
    CHECK(cer("", "abcd") == 1.0);
    CHECK(cer("kitten", "sitting") == Catch::Approx(3.0 / 7.0).margin(1e-15));
    CHECK_THROWS_AS(cer("abc", ""), invalid_argument);
}
