#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dewarp/dataset.hpp"
#include "test_support.hpp"

using namespace dewarp;

TEST_CASE("make_layout produces a valid layout with at least one text block") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        DocumentLayout layout = make_layout(seed, 288, 288);
        CHECK_NOTHROW(layout.validate());
        bool has_text = false;
        for (const LayoutBlock& b : layout.blocks) has_text |= b.kind == BlockKind::Text;
        CHECK(has_text);
    }
    CHECK_THROWS_AS(make_layout(1, 64, 288), invalid_argument);
}

TEST_CASE("ink accounting matches the mask") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        RenderedDocument doc = render_document(make_layout(seed));
        CHECK(doc.ink_pixels == static_cast<long>(doc.mask.sum()));
        CHECK(doc.ink_pixels > 0);
        CHECK_NOTHROW(doc.image.validate_image("doc"));
    }
}

TEST_CASE("rendering is deterministic") {
    RenderedDocument a = render_document(make_layout(77));
    RenderedDocument b = render_document(make_layout(77));
    CHECK(a.image.data == b.image.data);
    CHECK(a.mask.data == b.mask.data);
    REQUIRE(a.lines.size() == b.lines.size());
}

TEST_CASE("table block emits one ruling per grid line with exact endpoints") {
    DocumentLayout layout = make_table_layout(5, 3, 3);
    RenderedDocument doc = render_document(layout);
    const LayoutBlock& table = layout.blocks.back();
    REQUIRE(table.kind == BlockKind::Table);
    int rulings = 0;
    int horizontal = 0, vertical = 0;
    for (const LineElement& l : doc.lines) {
        if (l.kind != LineKind::RulingLine) continue;
        ++rulings;
        REQUIRE(l.points.size() == 2);
        CHECK(l.points[0].x == std::floor(l.points[0].x));  // integer endpoints
        CHECK(l.points[0].y == std::floor(l.points[0].y));
        if (l.points[0].y == l.points[1].y) ++horizontal;
        if (l.points[0].x == l.points[1].x) ++vertical;
        // The stroke is actually inked at both endpoints.
        CHECK(doc.mask.at(static_cast<int>(l.points[0].y),
                          static_cast<int>(l.points[0].x)) == 1.0);
        CHECK(doc.mask.at(static_cast<int>(l.points[1].y),
                          static_cast<int>(l.points[1].x)) == 1.0);
    }
    CHECK(rulings == (table.rows + 1) + (table.cols + 1));
    CHECK(horizontal == table.rows + 1);
    CHECK(vertical == table.cols + 1);
}

TEST_CASE("text midline points sit on inked pixels") {
    RenderedDocument doc = render_document(make_layout(3));
    int checked = 0;
    for (const LineElement& l : doc.lines) {
        if (l.kind != LineKind::TextMidline) continue;
        for (const Vec2& p : l.points) {
            int cx = static_cast<int>(std::lround(p.x));
            int cy = static_cast<int>(std::lround(p.y));
            bool hit = false;
            for (int dy = -1; dy <= 1 && !hit; ++dy)
                for (int dx = -1; dx <= 1 && !hit; ++dx) {
                    int yy = cy + dy, xx = cx + dx;
                    if (yy < 0 || yy >= doc.mask.height || xx < 0 || xx >= doc.mask.width)
                        continue;
                    hit = doc.mask.at(yy, xx) == 1.0;
                }
            CHECK(hit);
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("make_sample with the identity field is a pass-through") {
    RenderedDocument doc = render_document(make_layout(9, 128, 128));
    DeformationField id = DeformationField::identity(128, 128);
    SampleBuildInfo info;
    TrainingSample s = make_sample(doc, id, 42, 0.4, &info);
    CHECK(s.distorted.data == doc.image.data);
    CHECK(s.mask.data == doc.mask.data);
    CHECK(info.dropped_points == 0);
    CHECK(info.dropped_lines == 0);
    REQUIRE(s.lines.size() == doc.lines.size());
    for (std::size_t li = 0; li < s.lines.size(); ++li) {
        REQUIRE(s.lines[li].points.size() == doc.lines[li].points.size());
        for (std::size_t k = 0; k < s.lines[li].points.size(); ++k) {
            CHECK(std::abs(s.lines[li].points[k].x - doc.lines[li].points[k].x) < 1e-6);
            CHECK(std::abs(s.lines[li].points[k].y - doc.lines[li].points[k].y) < 1e-6);
        }
    }
}

TEST_CASE("make_sample fills background outside the page") {
    // Shift the field so part of the output looks outside the flat page.
    RenderedDocument doc = render_document(make_layout(9, 128, 128));
    DeformationField bm = DeformationField::identity(128, 128);
    for (Vec2& v : bm.coords) v.x -= 0.2;
    TrainingSample s = make_sample(doc, bm, 42, 0.4);
    // Leftmost columns reference x < 0: background, never page-white.
    int bg_count = 0;
    for (int i = 0; i < 128; ++i)
        if (s.mask.at(i, 0) == 0.0) ++bg_count;
    CHECK(bg_count == 128);
    CHECK_NOTHROW(s.distorted.validate_image("sample"));
}

TEST_CASE("distorted sample keeps its line labels on ink") {
    // Map each emitted line point back through the target field; it must land
    // near inked flat-page pixels.
    RenderedDocument doc = render_document(make_layout(4, 160, 160));
    DeformationField bm = generate_field(11, 160, 160, 0.3);
    SampleBuildInfo info;
    TrainingSample s = make_sample(doc, bm, 1, 0.4, &info);
    REQUIRE(!s.lines.empty());
    int on_ink = 0, total = 0;
    for (const LineElement& l : s.lines) {
        for (const Vec2& p : l.points) {
            Vec2 u(p.x / 159.0, p.y / 159.0);
            Vec2 q = field_sample(bm, u);
            if (q.x < 0.0 || q.x > 1.0 || q.y < 0.0 || q.y > 1.0) continue;
            int cx = static_cast<int>(std::lround(q.x * 159.0));
            int cy = static_cast<int>(std::lround(q.y * 159.0));
            ++total;
            bool hit = false;
            for (int dy = -3; dy <= 3 && !hit; ++dy)
                for (int dx = -3; dx <= 3 && !hit; ++dx) {
                    int yy = clamp_int(cy + dy, 0, 159), xx = clamp_int(cx + dx, 0, 159);
                    hit = doc.mask.at(yy, xx) == 1.0;
                }
            if (hit) ++on_ink;
        }
    }
    REQUIRE(total > 50);
    // The inversion is approximate; allow a small miss rate.
    CHECK(on_ink >= total * 95 / 100);
}

TEST_CASE("dataset generation writes complete deterministic samples") {
    std::string da = testsup::scratch_dir("dataset_a");
    std::string db = testsup::scratch_dir("dataset_b");
    GenConfig cfg;
    cfg.count = 2;
    cfg.size = 96;
    cfg.seed = 7;
    GenReport ra = generate_dataset(da, cfg);
    GenReport rb = generate_dataset(db, cfg);
    CHECK(ra.generated == 2);
    CHECK(ra.skipped == 0);
    CHECK(ra.incomplete_dirs.empty());

    auto fa = testsup::list_files_recursive(da);
    auto fb = testsup::list_files_recursive(db);
    REQUIRE(fa == fb);
    REQUIRE(fa.size() == 2 * 5 + 1);  // five files per sample plus the manifest
    for (const std::string& rel : fa)
        CHECK(testsup::read_file_bytes(da + "/" + rel) ==
              testsup::read_file_bytes(db + "/" + rel));
}

TEST_CASE("dataset generation resumes over incomplete samples") {
    std::string dir = testsup::scratch_dir("dataset_resume");
    GenConfig cfg;
    cfg.count = 2;
    cfg.size = 96;
    cfg.seed = 3;
    generate_dataset(dir, cfg);
    std::string meta0 = dir + "/sample_000000/meta.json";
    std::string before = testsup::read_file_bytes(meta0);
    std::filesystem::remove(meta0);
    GenReport rep = generate_dataset(dir, cfg);
    CHECK(rep.generated == 1);
    CHECK(rep.skipped == 1);
    CHECK(testsup::read_file_bytes(meta0) == before);
    CHECK(list_complete_samples(dir).size() == 2);
}

TEST_CASE("saved samples load back and match their meta") {
    std::string dir = testsup::scratch_dir("dataset_load");
    GenConfig cfg;
    cfg.count = 1;
    cfg.size = 96;
    cfg.seed = 5;
    cfg.crop_prob = 1.0;  // force the crop path
    generate_dataset(dir, cfg);
    LoadedSample ls = load_sample(dir + "/sample_000000");
    CHECK(ls.sample.distorted.height == 96);
    CHECK(ls.sample.target_bm.height == 96);
    CHECK(ls.meta.crop.has_value());
    CHECK(ls.meta.base_size > 96);
    // The stored field equals the regenerated one after f32 quantization.
    DeformationField regen = field_from_meta(ls.meta);
    REQUIRE(regen.coords.size() == ls.sample.target_bm.coords.size());
    for (std::size_t i = 0; i < regen.coords.size(); ++i) {
        CHECK(ls.sample.target_bm.coords[i].x ==
              static_cast<double>(static_cast<float>(regen.coords[i].x)));
        CHECK(ls.sample.target_bm.coords[i].y ==
              static_cast<double>(static_cast<float>(regen.coords[i].y)));
    }
    CHECK_THROWS_AS(load_sample(dir + "/sample_000042"), data_error);
}
