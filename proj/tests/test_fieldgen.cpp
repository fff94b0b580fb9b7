#include <catch2/catch_amalgamated.hpp>

#include "dewarp/fieldgen.hpp"

using namespace dewarp;

TEST_CASE("generated fields are deterministic in the seed") {
    DeformationField a = generate_field(5, 48, 48, 0.7);
    DeformationField b = generate_field(5, 48, 48, 0.7);
    DeformationField c = generate_field(6, 48, 48, 0.7);
    REQUIRE(a.coords.size() == b.coords.size());
    bool equal = true, differs = false;
    for (std::size_t i = 0; i < a.coords.size(); ++i) {
        equal &= a.coords[i].x == b.coords[i].x && a.coords[i].y == b.coords[i].y;
        differs |= a.coords[i].x != c.coords[i].x || a.coords[i].y != c.coords[i].y;
    }
    CHECK(equal);
    CHECK(differs);
}

TEST_CASE("zero severity is the exact identity") {
    DeformationField f = generate_field(123, 40, 56, 0.0);
    DeformationField id = DeformationField::identity(40, 56);
    for (std::size_t i = 0; i < f.coords.size(); ++i) {
        CHECK(f.coords[i].x == id.coords[i].x);
        CHECK(f.coords[i].y == id.coords[i].y);
    }
}

TEST_CASE("generated fields respect value bounds and smoothness") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DeformationField f = generate_field(seed, 48, 64, 1.0);
        CHECK_NOTHROW(f.validate_values("gen"));
        CHECK(f.max_adjacent_jump() < 4.0 / 48.0);
    }
}

TEST_CASE("generate_field rejects bad arguments") {
    CHECK_THROWS_AS(generate_field(1, 16, 64, 0.5), invalid_argument);
    CHECK_THROWS_AS(generate_field(1, 64, 64, 1.5), invalid_argument);
    CHECK_THROWS_AS(generate_field(1, 64, 64, -0.1), invalid_argument);
}

TEST_CASE("inverting the identity gives the identity") {
    DeformationField id = DeformationField::identity(40, 40);
    for (double ratio : {0.1, 0.4, 1.0}) {
        DeformationField fm = invert_field(id, ratio);
        CHECK(fm.direction == Direction::Forward);
        for (std::size_t i = 0; i < id.coords.size(); ++i) {
            CHECK(std::abs(fm.coords[i].x - id.coords[i].x) < 1e-12);
            CHECK(std::abs(fm.coords[i].y - id.coords[i].y) < 1e-12);
        }
    }
}

TEST_CASE("inverting a pure translation negates it") {
    DeformationField bm = DeformationField::identity(36, 36);
    for (Vec2& v : bm.coords) v += Vec2(0.05, -0.03);
    DeformationField fm = invert_field(bm, 0.4);
    DeformationField id = DeformationField::identity(36, 36);
    for (std::size_t i = 0; i < fm.coords.size(); ++i) {
        CHECK(std::abs(fm.coords[i].x - (id.coords[i].x - 0.05)) < 1e-3);
        CHECK(std::abs(fm.coords[i].y - (id.coords[i].y + 0.03)) < 1e-3);
    }
}

TEST_CASE("inversion round trip stays close on generated fields") {
    DeformationField bm = generate_field(17, 64, 64, 0.3);
    DeformationField fm = invert_field(bm, 0.4);
    Rng rng(99);
    double sum = 0.0;
    int n = 0;
    for (int t = 0; t < 500; ++t) {
        Vec2 p(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        Vec2 q = field_sample(bm, p);
        if (q.x < 0.0 || q.x > 1.0 || q.y < 0.0 || q.y > 1.0) continue;
        Vec2 back = field_sample(fm, q);
        sum += (back - p).norm();
        ++n;
    }
    REQUIRE(n > 300);
    CHECK(sum / n < 0.02);
}

TEST_CASE("invert_field argument checks") {
    DeformationField fwd(8, 8, Direction::Forward);
    CHECK_THROWS_AS(invert_field(fwd, 0.4), invalid_argument);
    DeformationField id = DeformationField::identity(8, 8);
    CHECK_THROWS_AS(invert_field(id, 0.0), invalid_argument);
    CHECK_THROWS_AS(invert_field(id, 1.5), invalid_argument);
}

TEST_CASE("crop_augment copies the subgrid verbatim") {
    DeformationField bm = generate_field(3, 64, 64, 0.5);
    CropRect r{4, 6, 56, 56};
    DeformationField out = crop_augment(bm, r);
    CHECK(out.height == 56);
    CHECK(out.width == 56);
    for (int i = 0; i < 56; ++i)
        for (int j = 0; j < 56; ++j) {
            CHECK(out.at(i, j).x == bm.at(6 + i, 4 + j).x);
            CHECK(out.at(i, j).y == bm.at(6 + i, 4 + j).y);
        }
}

TEST_CASE("crop_augment guards") {
    DeformationField bm = generate_field(3, 64, 64, 0.5);
    CHECK_THROWS_AS(crop_augment(bm, CropRect{0, 0, 32, 32}), invalid_argument);  // area
    CHECK_THROWS_AS(crop_augment(bm, CropRect{10, 0, 60, 60}), invalid_argument); // bounds
    DeformationField fm(8, 8, Direction::Forward);
    CHECK_THROWS_AS(crop_augment(fm, CropRect{0, 0, 8, 8}), invalid_argument);
}

TEST_CASE("warping with a cropped field equals cropping the warped raster") {
    DeformationField bm = generate_field(9, 64, 64, 0.4);
    Rng rng(2);
    Raster src(64, 64, 1);
    for (double& v : src.data) v = rng.uniform();
    CropRect r{2, 5, 58, 58};
    Raster full = warp_raster(src, bm);
    Raster cropped = warp_raster(src, crop_augment(bm, r));
    for (int i = 0; i < 58; ++i)
        for (int j = 0; j < 58; ++j)
            CHECK(cropped.at(i, j) == full.at(5 + i, 2 + j));
}

TEST_CASE("overlap_augment blends and keeps the endpoints") {
    DeformationField a = generate_field(4, 48, 48, 0.5);
    DeformationField b = generate_field(8, 48, 48, 0.5);
    DeformationField w1 = overlap_augment(a, b, 1.0);
    DeformationField w0 = overlap_augment(a, b, 0.0);
    DeformationField mid = overlap_augment(a, b, 0.5);
    for (std::size_t i = 0; i < a.coords.size(); ++i) {
        CHECK(w1.coords[i].x == a.coords[i].x);  // exact at weight 1
        CHECK(std::abs(w0.coords[i].x - b.coords[i].x) < 1e-15);
        CHECK(std::abs(mid.coords[i].x - 0.5 * (a.coords[i].x + b.coords[i].x)) < 1e-15);
    }
    // Equal inputs reproduce bitwise at any weight.
    DeformationField same = overlap_augment(a, a, 0.37);
    for (std::size_t i = 0; i < a.coords.size(); ++i) {
        CHECK(same.coords[i].x == a.coords[i].x);
        CHECK(same.coords[i].y == a.coords[i].y);
    }
    CHECK_NOTHROW(mid.validate_values("blend"));
}

TEST_CASE("overlap_augment guards") {
    DeformationField a = generate_field(4, 48, 48, 0.5);
    DeformationField small = generate_field(4, 32, 32, 0.5);
    CHECK_THROWS_AS(overlap_augment(a, small, 0.5), invalid_argument);
    CHECK_THROWS_AS(overlap_augment(a, a, 1.5), invalid_argument);
    DeformationField fwd(48, 48, Direction::Forward);
    CHECK_THROWS_AS(overlap_augment(a, fwd, 0.5), invalid_argument);
}
