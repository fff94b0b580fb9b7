#pragma once

#include <vector>

#include "dewarp/fieldgen.hpp"
#include "dewarp/lines.hpp"
#include "dewarp/raster.hpp"
#include "dewarp/warp.hpp"

namespace dewarp {

enum class BlockKind : std::uint8_t { Text = 0, Table = 1, Figure = 2 };

struct LayoutBlock {
    BlockKind kind = BlockKind::Text;
    int x = 0, y = 0, width = 0, height = 0;
    int rows = 0, cols = 0;  // tables only
};

struct DocumentLayout {
    int height = 288;
    int width = 288;
    std::uint64_t seed = 0;  // drives glyph geometry and ink values
    std::vector<LayoutBlock> blocks;

    void validate() const {
        if (height < 64 || width < 64)
            throw invalid_argument("DocumentLayout: page must be at least 64x64");
        bool has_text = false;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const LayoutBlock& b = blocks[i];
            if (b.x < 0 || b.y < 0 || b.width < 8 || b.height < 8 ||
                b.x + b.width > width || b.y + b.height > height)
                throw invalid_argument("DocumentLayout: block outside the page");
            if (b.kind == BlockKind::Text) has_text = true;
            if (b.kind == BlockKind::Table &&
                (b.rows < 1 || b.cols < 1 ||
                 b.width / (b.cols + 0.0) < 10.0 || b.height / (b.rows + 0.0) < 10.0))
                throw invalid_argument("DocumentLayout: table cells too small");
            for (std::size_t j = i + 1; j < blocks.size(); ++j) {
                const LayoutBlock& o = blocks[j];
                bool overlap = b.x < o.x + o.width && o.x < b.x + b.width &&
                               b.y < o.y + o.height && o.y < b.y + b.height;
                if (overlap) throw invalid_argument("DocumentLayout: blocks overlap");
            }
        }
        if (!has_text)
            throw invalid_argument("DocumentLayout: needs at least one text block");
    }
};

struct RenderedDocument {
    Raster image;  // 3-channel, white page with dark ink
    Raster mask;   // 1 where ink was drawn
    std::vector<LineElement> lines;
    long ink_pixels = 0;
};

struct TrainingSample {
    Raster distorted;  // 3-channel
    Raster mask;
    std::vector<LineElement> lines;  // pixel coords in the distorted raster
    DeformationField target_bm;
};

struct SampleBuildInfo {
    int dropped_points = 0;
    int dropped_lines = 0;
};

// Random vertical stack of blocks. Guarantees at least one text block.
inline DocumentLayout make_layout(std::uint64_t seed, int height = 288, int width = 288) {
    if (height < 96 || width < 96)
        throw invalid_argument("make_layout: page must be at least 96x96");
    Rng rng(seed, 0xA5C9u);
    DocumentLayout layout;
    layout.height = height;
    layout.width = width;
    layout.seed = seed;
    const int margin = 18;
    int y = margin;
    bool has_text = false;
    while (y + 36 <= height - margin) {
        LayoutBlock b;
        double pick = rng.uniform();
        b.kind = pick < 0.55 ? BlockKind::Text
                             : (pick < 0.80 ? BlockKind::Table : BlockKind::Figure);
        int max_h = height - margin - y;
        int want = b.kind == BlockKind::Table ? 52 + static_cast<int>(rng.below(48))
                                              : 40 + static_cast<int>(rng.below(44));
        b.height = std::min(want, max_h);
        if (b.height < 36) break;
        b.x = margin + static_cast<int>(rng.below(12));
        b.width = width - margin - b.x - static_cast<int>(rng.below(12));
        b.y = y;
        if (b.kind == BlockKind::Table) {
            b.rows = 2 + static_cast<int>(rng.below(3));
            b.cols = 2 + static_cast<int>(rng.below(3));
            while (b.height / b.rows < 14) --b.rows;
            while (b.width / b.cols < 18) --b.cols;
            if (b.rows < 1) b.rows = 1;
            if (b.cols < 1) b.cols = 1;
        }
        if (b.kind == BlockKind::Text) has_text = true;
        layout.blocks.push_back(b);
        y += b.height + 8 + static_cast<int>(rng.below(10));
    }
    if (!has_text) {
        if (layout.blocks.empty()) {
            layout.blocks.push_back({BlockKind::Text, margin, margin,
                                     width - 2 * margin, 48, 0, 0});
        } else {
            layout.blocks.front().kind = BlockKind::Text;
            layout.blocks.front().rows = layout.blocks.front().cols = 0;
        }
    }
    layout.validate();
    return layout;
}

// Small text header plus one dominant table; used by the extraction tests.
inline DocumentLayout make_table_layout(std::uint64_t seed, int rows, int cols,
                                        int height = 288, int width = 288) {
    Rng rng(seed, 0xA5CAu);
    DocumentLayout layout;
    layout.height = height;
    layout.width = width;
    layout.seed = seed;
    const int margin = 20;
    LayoutBlock text{BlockKind::Text, margin, margin, width - 2 * margin,
                     34 + static_cast<int>(rng.below(10)), 0, 0};
    layout.blocks.push_back(text);
    int ty = text.y + text.height + 10 + static_cast<int>(rng.below(8));
    LayoutBlock table{BlockKind::Table, margin + static_cast<int>(rng.below(8)), ty, 0, 0,
                      rows, cols};
    table.width = width - margin - table.x - static_cast<int>(rng.below(8));
    table.height = height - margin - ty - static_cast<int>(rng.below(10));
    layout.blocks.push_back(table);
    layout.validate();
    return layout;
}

namespace detail {

inline void render_text_block(const LayoutBlock& b, Rng& rng, RenderedDocument& doc) {
    double ink = rng.uniform(0.05, 0.30);
    int row_h = 11 + static_cast<int>(rng.below(5));
    for (int ry = b.y; ry + row_h <= b.y + b.height; ry += row_h + 2) {
        int glyph_h = row_h - 4;
        int y_top = ry + 2;
        double y_mid = y_top + (glyph_h - 1) / 2.0;
        std::vector<double> centers;
        int first_x = -1, last_x = -1;
        int x = b.x + static_cast<int>(rng.below(6));
        while (true) {
            int gw = 3 + static_cast<int>(rng.below(5));
            if (x + gw > b.x + b.width) break;
            if (rng.chance(0.14)) {  // word gap
                x += gw + 3;
                continue;
            }
            doc.ink_pixels += fill_rect(doc.image, &doc.mask, x, y_top, x + gw,
                                        y_top + glyph_h, ink);
            centers.push_back(x + (gw - 1) / 2.0);
            if (first_x < 0) first_x = x;
            last_x = x + gw - 1;
            x += gw + 1 + static_cast<int>(rng.below(2));
        }
        if (centers.size() < 2) continue;  // row not drawn densely enough, no midline
        LineElement line;
        line.kind = LineKind::TextMidline;
        line.points.push_back(Vec2(first_x, y_mid));
        for (double cx : centers)
            if (cx > first_x && cx < last_x) line.points.push_back(Vec2(cx, y_mid));
        line.points.push_back(Vec2(last_x, y_mid));
        line.validate();
        doc.lines.push_back(std::move(line));
    }
}

inline void render_table_block(const LayoutBlock& b, Rng& rng, RenderedDocument& doc) {
    double ink = rng.uniform(0.05, 0.20);
    std::vector<int> xs(b.cols + 1), ys(b.rows + 1);
    for (int k = 0; k <= b.cols; ++k)
        xs[k] = b.x + static_cast<int>(std::lround(k * (b.width - 1.0) / b.cols));
    for (int k = 0; k <= b.rows; ++k)
        ys[k] = b.y + static_cast<int>(std::lround(k * (b.height - 1.0) / b.rows));
    for (int k = 0; k <= b.rows; ++k) {
        int y = ys[k];
        doc.ink_pixels += fill_rect(doc.image, &doc.mask, xs[0], y, xs[b.cols] + 1, y + 1, ink);
        LineElement line;
        line.kind = LineKind::RulingLine;
        line.points = {Vec2(xs[0], y), Vec2(xs[b.cols], y)};
        doc.lines.push_back(std::move(line));
    }
    for (int k = 0; k <= b.cols; ++k) {
        int x = xs[k];
        doc.ink_pixels += fill_rect(doc.image, &doc.mask, x, ys[0], x + 1, ys[b.rows] + 1, ink);
        LineElement line;
        line.kind = LineKind::RulingLine;
        line.points = {Vec2(x, ys[0]), Vec2(x, ys[b.rows])};
        doc.lines.push_back(std::move(line));
    }
}

inline void render_figure_block(const LayoutBlock& b, Rng& rng, RenderedDocument& doc) {
    double ink = rng.uniform(0.20, 0.45);
    if (rng.chance(0.5)) {
        double r = 0.5 * std::min(b.width, b.height) - 2 - rng.below(6);
        doc.ink_pixels += fill_disk(doc.image, &doc.mask, b.x + b.width / 2.0,
                                    b.y + b.height / 2.0, std::max(4.0, r), ink);
    } else {
        int inset_x = 2 + static_cast<int>(rng.below(8));
        int inset_y = 2 + static_cast<int>(rng.below(6));
        doc.ink_pixels += fill_rect(doc.image, &doc.mask, b.x + inset_x, b.y + inset_y,
                                    b.x + b.width - inset_x, b.y + b.height - inset_y, ink);
    }
}

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline double lattice_noise(std::uint64_t seed, int ix, int iy) {
    std::uint64_t h = mix64(seed ^ (static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ull) ^
                            (static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4Full));
    return (h >> 11) * 0x1p-53;
}

inline double value_noise_at(std::uint64_t seed, double x, double y, double cell) {
    double gx = x / cell, gy = y / cell;
    int ix = static_cast<int>(std::floor(gx)), iy = static_cast<int>(std::floor(gy));
    double fx = gx - ix, fy = gy - iy;
    double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
    double v00 = lattice_noise(seed, ix, iy), v01 = lattice_noise(seed, ix + 1, iy);
    double v10 = lattice_noise(seed, ix, iy + 1), v11 = lattice_noise(seed, ix + 1, iy + 1);
    double a = v00 + (v01 - v00) * sx;
    double b = v10 + (v11 - v10) * sx;
    return a + (b - a) * sy;
}

}  // namespace detail

// Procedural desk-like background, two octaves of smoothed value noise with a
// slight per-channel tint.
inline Raster value_noise_texture(int height, int width, int channels, std::uint64_t seed) {
    if (channels != 1 && channels != 3)
        throw invalid_argument("value_noise_texture: 1 or 3 channels");
    Raster out(height, width, channels);
    double tint[3] = {detail::lattice_noise(seed, -7, 3) * 0.12 - 0.06,
                      detail::lattice_noise(seed, -9, 5) * 0.12 - 0.06,
                      detail::lattice_noise(seed, -11, 7) * 0.12 - 0.06};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double n = 0.72 * detail::value_noise_at(seed, x, y, 23.0) +
                       0.28 * detail::value_noise_at(seed + 0x51ed, x, y, 7.0);
            double g = 0.28 + 0.42 * n;
            for (int c = 0; c < channels; ++c)
                out.at(y, x, c) = clamp(g + (channels == 3 ? tint[c] : 0.0), 0.0, 1.0);
        }
    }
    return out;
}

inline RenderedDocument render_document(const DocumentLayout& layout) {
    layout.validate();
    RenderedDocument doc;
    doc.image = Raster::constant(layout.height, layout.width, 3, 1.0);
    doc.mask = Raster::zeros(layout.height, layout.width, 1);
    std::uint32_t block_index = 0;
    for (const LayoutBlock& b : layout.blocks) {
        Rng rng(layout.seed, 0xD00C0000u + block_index++);
        switch (b.kind) {
            case BlockKind::Text: detail::render_text_block(b, rng, doc); break;
            case BlockKind::Table: detail::render_table_block(b, rng, doc); break;
            case BlockKind::Figure: detail::render_figure_block(b, rng, doc); break;
        }
    }
    return doc;
}

// Applies a backward field to a rendered document: resamples image and mask,
// fills non-page area with background texture, and pushes the label lines
// into the distorted frame with the inverted field. Line runs leaving the
// output extent are clipped at the boundary and split.
inline TrainingSample make_sample(const RenderedDocument& doc, const DeformationField& bm,
                                  std::uint64_t background_seed, double invert_ratio = 0.4,
                                  SampleBuildInfo* info = nullptr) {
    if (doc.image.channels != 3)
        throw invalid_argument("make_sample: document image must be 3-channel");
    bm.validate_values("make_sample: bm");
    TrainingSample s;
    s.target_bm = bm;
    Raster warped_img = warp_raster(doc.image, bm);
    Raster warped_mask = warp_raster(doc.mask, bm);
    Raster bg = value_noise_texture(bm.height, bm.width, 3, background_seed);
    s.distorted = Raster(bm.height, bm.width, 3);
    s.mask = Raster(bm.height, bm.width, 1);
    for (int i = 0; i < bm.height; ++i) {
        for (int j = 0; j < bm.width; ++j) {
            const Vec2& v = bm.at(i, j);
            bool inside = v.x >= 0.0 && v.x <= 1.0 && v.y >= 0.0 && v.y <= 1.0;
            for (int c = 0; c < 3; ++c)
                s.distorted.at(i, j, c) = inside ? warped_img.at(i, j, c) : bg.at(i, j, c);
            s.mask.at(i, j) = inside && warped_mask.at(i, j) >= 0.5 ? 1.0 : 0.0;
        }
    }

    DeformationField fm = invert_field(bm, invert_ratio);
    double wx = bm.width - 1.0, wy = bm.height - 1.0;
    double dx = doc.image.width - 1.0, dy = doc.image.height - 1.0;
    for (const LineElement& line : doc.lines) {
        std::size_t emitted_before = s.lines.size();
        std::vector<Vec2> mapped;
        mapped.reserve(line.points.size());
        for (const Vec2& p : line.points) {
            Vec2 u(clamp(p.x / dx, 0.0, 1.0), clamp(p.y / dy, 0.0, 1.0));
            Vec2 q = field_sample(fm, u);
            mapped.push_back(Vec2(q.x * wx, q.y * wy));
        }
        auto in_extent = [&](const Vec2& p) {
            return p.x >= 0.0 && p.x <= wx && p.y >= 0.0 && p.y <= wy;
        };
        // Split into maximal in-extent runs, clipping at the crossings.
        std::vector<Vec2> run;
        auto flush = [&]() {
            if (run.size() >= 2) {
                LineElement out;
                out.kind = line.kind;
                out.points = run;
                s.lines.push_back(std::move(out));
            } else if (!run.empty() && info) {
                info->dropped_points += static_cast<int>(run.size());
            }
            run.clear();
        };
        auto clip_to_edge = [&](const Vec2& in, const Vec2& out) {
            double t = 1.0;
            if (out.x < 0.0) t = std::min(t, (0.0 - in.x) / (out.x - in.x));
            if (out.x > wx) t = std::min(t, (wx - in.x) / (out.x - in.x));
            if (out.y < 0.0) t = std::min(t, (0.0 - in.y) / (out.y - in.y));
            if (out.y > wy) t = std::min(t, (wy - in.y) / (out.y - in.y));
            return Vec2(clamp(in.x + t * (out.x - in.x), 0.0, wx),
                        clamp(in.y + t * (out.y - in.y), 0.0, wy));
        };
        for (std::size_t k = 0; k < mapped.size(); ++k) {
            const Vec2& p = mapped[k];
            if (in_extent(p)) {
                if (run.empty() && k > 0 && !in_extent(mapped[k - 1])) {
                    Vec2 edge = clip_to_edge(p, mapped[k - 1]);
                    if ((edge - p).norm2() > 1e-12) run.push_back(edge);
                    if (info) ++info->dropped_points;
                }
                run.push_back(p);
            } else {
                if (info) ++info->dropped_points;
                if (!run.empty()) {
                    Vec2 edge = clip_to_edge(run.back(), p);
                    if ((edge - run.back()).norm2() > 1e-12) run.push_back(edge);
                    flush();
                }
            }
        }
        flush();
        if (info && s.lines.size() == emitted_before) ++info->dropped_lines;
    }
    return s;
}

}  // namespace dewarp
