#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "dewarp/field.hpp"
#include "dewarp/lines.hpp"
#include "dewarp/png_io.hpp"
#include "test_support.hpp"

using namespace dewarp;

TEST_CASE("identity field holds normalized pixel centers") {
    DeformationField f = DeformationField::identity(3, 5);
    CHECK(f.at(0, 0).x == 0.0);
    CHECK(f.at(0, 0).y == 0.0);
    CHECK(f.at(2, 4).x == 1.0);
    CHECK(f.at(2, 4).y == 1.0);
    CHECK(f.at(1, 2).x == 0.5);
    CHECK(f.at(1, 2).y == 0.5);
    CHECK(f.direction == Direction::Backward);
}

TEST_CASE("max_adjacent_jump of identity is the grid pitch") {
    DeformationField f = DeformationField::identity(5, 9);
    CHECK(f.max_adjacent_jump() == Catch::Approx(1.0 / 4.0).margin(1e-15));
}

TEST_CASE("field validation") {
    CHECK_THROWS_AS(DeformationField(1, 5, Direction::Backward), invalid_argument);
    DeformationField f = DeformationField::identity(3, 3);
    CHECK_NOTHROW(f.validate_values("t"));
    f.at(0, 0).x = 1.30;
    CHECK_THROWS_AS(f.validate_values("t"), invalid_argument);
    f.at(0, 0).x = -0.25;  // boundary is allowed
    CHECK_NOTHROW(f.validate_values("t"));
}

TEST_CASE("field file round trip preserves f32 payload bit-exactly") {
    std::string dir = testsup::scratch_dir("field_io");
    DeformationField f(4, 6, Direction::Forward);
    Rng rng(11);
    for (Vec2& v : f.coords) v = Vec2(rng.uniform(-0.25, 1.25), rng.uniform(-0.25, 1.25));
    save_field(dir + "/f.dfld", f);
    DeformationField g = load_field(dir + "/f.dfld");
    CHECK(g.height == 4);
    CHECK(g.width == 6);
    CHECK(g.direction == Direction::Forward);
    for (std::size_t i = 0; i < f.coords.size(); ++i) {
        CHECK(g.coords[i].x == static_cast<double>(static_cast<float>(f.coords[i].x)));
        CHECK(g.coords[i].y == static_cast<double>(static_cast<float>(f.coords[i].y)));
    }
    // Re-encoding the loaded field reproduces the bytes.
    CHECK(encode_dfld(g) == testsup::read_file_bytes(dir + "/f.dfld"));
}

TEST_CASE("field decode rejects malformed payloads") {
    DeformationField f = DeformationField::identity(2, 2);
    std::string good = encode_dfld(f);
    CHECK_THROWS_AS(decode_dfld("", "t"), data_error);
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_dfld(bad_magic, "t"), data_error);
    std::string bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_AS(decode_dfld(bad_version, "t"), data_error);
    std::string truncated = good.substr(0, good.size() - 1);
    CHECK_THROWS_AS(decode_dfld(truncated, "t"), data_error);
    std::string trailing = good + "x";
    CHECK_THROWS_AS(decode_dfld(trailing, "t"), data_error);
    CHECK_THROWS_AS(load_field("/nonexistent/path.dfld"), data_error);
}

TEST_CASE("line element validation and arc length") {
    LineElement l;
    CHECK_THROWS_AS(l.validate(), invalid_argument);
    l.points = {{0, 0}, {0, 0}};
    CHECK_THROWS_AS(l.validate(), invalid_argument);
    l.points = {{0, 0}, {3, 4}, {3, 10}};
    CHECK_NOTHROW(l.validate());
    CHECK(l.arc_length() == Catch::Approx(11.0).margin(1e-12));
}

TEST_CASE("lines jsonl round trip") {
    std::string dir = testsup::scratch_dir("lines_io");
    std::vector<LineElement> lines(2);
    lines[0].kind = LineKind::TextMidline;
    lines[0].points = {{1.5, 2.25}, {10.0, 2.5}, {20.125, 2.75}};
    lines[1].kind = LineKind::RulingLine;
    lines[1].points = {{0.0, 5.0}, {100.0, 5.0}};
    save_lines(dir + "/l.jsonl", lines);
    std::vector<LineElement> back = load_lines(dir + "/l.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].kind == LineKind::TextMidline);
    CHECK(back[1].kind == LineKind::RulingLine);
    REQUIRE(back[0].points.size() == 3);
    CHECK(back[0].points[2].x == 20.125);
    CHECK(back[1].points[1].x == 100.0);

    std::ofstream(dir + "/bad.jsonl") << "{\"kind\":\"text\"}\n";
    CHECK_THROWS_AS(load_lines(dir + "/bad.jsonl"), data_error);
    std::ofstream(dir + "/bad2.jsonl") << "not json\n";
    CHECK_THROWS_AS(load_lines(dir + "/bad2.jsonl"), data_error);
}

TEST_CASE("png round trip at 8 and 16 bit") {
    std::string dir = testsup::scratch_dir("png_io");
    Raster rgb(5, 7, 3);
    Rng rng(5);
    for (double& v : rgb.data) v = rng.below(256) / 255.0;
    write_png(dir + "/a.png", rgb, 8);
    Raster back = read_png(dir + "/a.png");
    REQUIRE(back.same_shape(rgb));
    for (std::size_t i = 0; i < rgb.data.size(); ++i)
        CHECK(back.data[i] == Catch::Approx(rgb.data[i]).margin(1e-12));

    Raster gray(4, 4, 1);
    for (double& v : gray.data) v = rng.below(65536) / 65535.0;
    write_png(dir + "/b.png", gray, 16);
    Raster back16 = read_png(dir + "/b.png");
    REQUIRE(back16.same_shape(gray));
    for (std::size_t i = 0; i < gray.data.size(); ++i)
        CHECK(back16.data[i] == Catch::Approx(gray.data[i]).margin(1e-9));

    CHECK_THROWS_AS(read_png(dir + "/missing.png"), data_error);
    std::ofstream(dir + "/junk.png") << "not a png";
    CHECK_THROWS_AS(read_png(dir + "/junk.png"), data_error);
}

TEST_CASE("png writes are byte deterministic") {
    std::string dir = testsup::scratch_dir("png_det");
    Raster img(16, 16, 3);
    Rng rng(9);
    for (double& v : img.data) v = rng.uniform();
    write_png(dir + "/x.png", img, 8);
    write_png(dir + "/y.png", img, 8);
    CHECK(testsup::read_file_bytes(dir + "/x.png") ==
          testsup::read_file_bytes(dir + "/y.png"));
}
