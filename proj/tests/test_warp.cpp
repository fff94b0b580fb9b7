#include <catch2/catch_amalgamated.hpp>

#include "dewarp/warp.hpp"

using namespace dewarp;

TEST_CASE("bilinear center of a 2x2 checkerboard is the mean") {
    Raster src(2, 2, 1);
    src.at(0, 0) = 1.0;
    src.at(1, 1) = 1.0;
    CHECK(bilinear_at(src, 0, 0.5, 0.5) == Catch::Approx(0.5).margin(1e-15));
    CHECK(bilinear_at(src, 0, 0.0, 0.0) == 1.0);
    CHECK(bilinear_at(src, 0, 1.0, 0.0) == 0.0);
    // Edge clamping.
    CHECK(bilinear_at(src, 0, -3.0, 0.0) == 1.0);
    CHECK(bilinear_at(src, 0, 5.0, 5.0) == 1.0);
}

TEST_CASE("identity warp reproduces the source exactly") {
    Rng rng(21);
    Raster src(17, 13, 3);
    for (double& v : src.data) v = rng.uniform();
    Raster out = warp_raster(src, DeformationField::identity(17, 13));
    REQUIRE(out.same_shape(src));
    for (std::size_t i = 0; i < src.data.size(); ++i) CHECK(out.data[i] == src.data[i]);
}

TEST_CASE("identity warp survives dimension changes via snapping") {
    // Resampling a 7-wide source on a 7-wide identity grid must hit nodes
    // exactly even where j/(W-1)*(W-1) is not exact in floating point.
    Rng rng(22);
    Raster src(7, 7, 1);
    for (double& v : src.data) v = rng.uniform();
    Raster out = warp_raster(src, DeformationField::identity(7, 7));
    for (std::size_t i = 0; i < src.data.size(); ++i) CHECK(out.data[i] == src.data[i]);
}

TEST_CASE("warp output dimensions follow the field") {
    Raster src = Raster::constant(4, 4, 1, 0.25);
    Raster out = warp_raster(src, DeformationField::identity(9, 5));
    CHECK(out.height == 9);
    CHECK(out.width == 5);
    for (double v : out.data) CHECK(v == 0.25);
}

TEST_CASE("field_sample interpolates and bounds-checks") {
    DeformationField f = DeformationField::identity(3, 3);
    Vec2 mid = field_sample(f, Vec2(0.25, 0.75));
    CHECK(mid.x == Catch::Approx(0.25).margin(1e-12));
    CHECK(mid.y == Catch::Approx(0.75).margin(1e-12));
    CHECK_THROWS_AS(field_sample(f, Vec2(-0.01, 0.5)), out_of_bounds);
    CHECK_THROWS_AS(field_sample(f, Vec2(0.5, 1.01)), out_of_bounds);
    // Grid nodes are returned exactly.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            Vec2 v = field_sample(f, Vec2(j / 2.0, i / 2.0));
            CHECK(v.x == j / 2.0);
            CHECK(v.y == i / 2.0);
        }
}

TEST_CASE("warp_points is linear for an affine field") {
    // Field holding an affine map: sampling interpolates it exactly.
    DeformationField f(11, 11, Direction::Backward);
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            double u = j / 10.0, v = i / 10.0;
            f.at(i, j) = Vec2(0.1 + 0.7 * u + 0.1 * v, 0.05 + 0.05 * u + 0.8 * v);
        }
    Rng rng(4);
    for (int t = 0; t < 200; ++t) {
        Vec2 p(rng.uniform(), rng.uniform());
        Vec2 q = field_sample(f, p);
        CHECK(std::abs(q.x - (0.1 + 0.7 * p.x + 0.1 * p.y)) < 1e-9);
        CHECK(std::abs(q.y - (0.05 + 0.05 * p.x + 0.8 * p.y)) < 1e-9);
    }
}

TEST_CASE("composing with identity is a no-op") {
    DeformationField f(5, 5, Direction::Backward);
    Rng rng(8);
    for (Vec2& v : f.coords) v = Vec2(rng.uniform(), rng.uniform());
    DeformationField c = compose_fields(f, DeformationField::identity(5, 5));
    for (std::size_t i = 0; i < f.coords.size(); ++i) {
        CHECK(c.coords[i].x == Catch::Approx(f.coords[i].x).margin(1e-12));
        CHECK(c.coords[i].y == Catch::Approx(f.coords[i].y).margin(1e-12));
    }
    CHECK(c.direction == f.direction);
}
