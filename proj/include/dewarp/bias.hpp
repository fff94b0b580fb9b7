#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "dewarp/fieldgen.hpp"
#include "dewarp/lines.hpp"
#include "dewarp/metrics.hpp"
#include "dewarp/objective.hpp"
#include "dewarp/png_io.hpp"
#include "dewarp/raster.hpp"
#include "dewarp/warp.hpp"

namespace dewarp {

struct BiasInput {
    Raster image;  // flat document raster
    Raster mask;
    std::vector<LineElement> lines;  // pixel coords in the flat raster
    DeformationField bm;
};

struct RoundTripStats {
    double ssim = 0.0;
    double offset_min = 0.0;
    double offset_mean = 0.0;
    double offset_max = 0.0;
    double mask_iou = 1.0;
    long points_used = 0;
    long points_excluded = 0;
};

// Distort with the inverted field, restore with the backward field, and
// measure what survives: SSIM of the restored image, per-point round-trip
// offsets along the lines (px), and restored-mask IoU. Points whose forward
// position leaves the unit square are excluded and counted.
inline RoundTripStats round_trip(const BiasInput& in, double ratio) {
    if (in.image.height != in.mask.height || in.image.width != in.mask.width)
        throw invalid_argument("round_trip: image and mask dims must match");
    DeformationField fm = invert_field(in.bm, ratio);

    Raster warped = warp_raster(in.image, fm);
    Raster restored = warp_raster(warped, in.bm);
    RoundTripStats st;
    st.ssim = ms_ssim(restored, in.image, 1);

    Raster warped_mask = warp_raster(in.mask, fm);
    for (double& v : warped_mask.data) v = v >= 0.5 ? 1.0 : 0.0;
    Raster restored_mask = warp_raster(warped_mask, in.bm);
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < restored_mask.data.size(); ++i) {
        bool a = restored_mask.data[i] >= 0.5;
        bool b = in.mask.data[i] >= 0.5;
        inter += a && b;
        uni += a || b;
    }
    st.mask_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;

    double nx = in.image.width - 1.0, ny = in.image.height - 1.0;
    double acc = 0.0, mn = 1e300, mx = 0.0;
    for (const LineElement& line : in.lines) {
        ControlPointSet cps;
        try {
            cps = sample_line(line, 4.0);
        } catch (const line_too_short&) {
            continue;
        }
        for (const Vec2& p : cps.points) {
            Vec2 u(clamp(p.x / nx, 0.0, 1.0), clamp(p.y / ny, 0.0, 1.0));
            Vec2 fwd = field_sample(fm, u);
            if (fwd.x < 0.0 || fwd.x > 1.0 || fwd.y < 0.0 || fwd.y > 1.0) {
                ++st.points_excluded;
                continue;
            }
            Vec2 back = field_sample(in.bm, fwd);
            double off = std::sqrt(sqr((back.x - u.x) * nx) + sqr((back.y - u.y) * ny));
            acc += off;
            mn = std::min(mn, off);
            mx = std::max(mx, off);
            ++st.points_used;
        }
    }
    if (st.points_used > 0) {
        st.offset_mean = acc / st.points_used;
        st.offset_min = mn;
        st.offset_max = mx;
    }
    return st;
}

struct SweepRow {
    double ratio = 0.0;
    double ssim_mean = 0.0;
    double offset_min = 0.0;
    double offset_mean = 0.0;
    double offset_max = 0.0;
    double iou_mean = 0.0;
    long points_used = 0;
    long points_excluded = 0;
};

inline std::vector<SweepRow> ratio_sweep(const std::vector<BiasInput>& inputs,
                                         const std::vector<double>& ratios) {
    if (inputs.empty()) throw invalid_argument("ratio_sweep: no inputs");
    if (ratios.empty()) throw invalid_argument("ratio_sweep: no ratios");
    std::vector<SweepRow> rows;
    for (double ratio : ratios) {
        SweepRow row;
        row.ratio = ratio;
        row.offset_min = 1e300;
        double off_acc = 0.0;
        for (const BiasInput& in : inputs) {
            RoundTripStats st = round_trip(in, ratio);
            row.ssim_mean += st.ssim;
            row.iou_mean += st.mask_iou;
            if (st.points_used > 0) {
                off_acc += st.offset_mean * st.points_used;
                row.offset_min = std::min(row.offset_min, st.offset_min);
                row.offset_max = std::max(row.offset_max, st.offset_max);
            }
            row.points_used += st.points_used;
            row.points_excluded += st.points_excluded;
        }
        row.ssim_mean /= inputs.size();
        row.iou_mean /= inputs.size();
        row.offset_mean = row.points_used > 0 ? off_acc / row.points_used : 0.0;
        if (row.points_used == 0) row.offset_min = 0.0;
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out =
        "ratio,ssim_mean,offset_min_px,offset_mean_px,offset_max_px,mask_iou_mean,"
        "points_used,points_excluded\n";
    char buf[256];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.4f,%.6f,%.6f,%.6f,%.6f,%.6f,%ld,%ld\n", r.ratio,
                      r.ssim_mean, r.offset_min, r.offset_mean, r.offset_max, r.iou_mean,
                      r.points_used, r.points_excluded);
        out += buf;
    }
    return out;
}

namespace detail {

// 3x5 digit strokes for axis labels.
inline void draw_glyph(Raster& img, char ch, int x, int y, double r, double g, double b) {
    static const char* rows[12][5] = {
        {"###", "#.#", "#.#", "#.#", "###"}, {".#.", "##.", ".#.", ".#.", "###"},
        {"###", "..#", "###", "#..", "###"}, {"###", "..#", ".##", "..#", "###"},
        {"#.#", "#.#", "###", "..#", "..#"}, {"###", "#..", "###", "..#", "###"},
        {"###", "#..", "###", "#.#", "###"}, {"###", "..#", ".#.", ".#.", ".#."},
        {"###", "#.#", "###", "#.#", "###"}, {"###", "#.#", "###", "..#", "###"},
        {"...", "...", "...", "...", ".#."}, {"...", "...", "...", "...", "..."}};
    int idx;
    if (ch >= '0' && ch <= '9') idx = ch - '0';
    else if (ch == '.') idx = 10;
    else idx = 11;
    for (int yy = 0; yy < 5; ++yy)
        for (int xx = 0; xx < 3; ++xx)
            if (rows[idx][yy][xx] == '#' && y + yy >= 0 && y + yy < img.height && x + xx >= 0 &&
                x + xx < img.width) {
                img.at(y + yy, x + xx, 0) = r;
                if (img.channels == 3) {
                    img.at(y + yy, x + xx, 1) = g;
                    img.at(y + yy, x + xx, 2) = b;
                }
            }
}

inline void draw_label(Raster& img, const std::string& text, int x, int y, double r, double g,
                       double b) {
    for (std::size_t i = 0; i < text.size(); ++i)
        draw_glyph(img, text[i], x + static_cast<int>(i) * 4, y, r, g, b);
}

}  // namespace detail

// Offset-vs-ratio line plot (mean offset, with the IoU curve on a secondary
// 0..1 scale).
inline Raster render_sweep_plot(const std::vector<SweepRow>& rows) {
    const int w = 640, h = 480, ml = 56, mr = 24, mt = 24, mb = 44;
    Raster img = Raster::constant(h, w, 3, 1.0);
    draw_segment(img, ml, h - mb, w - mr, h - mb, 0.0, 0.0, 0.0);
    draw_segment(img, ml, mt, ml, h - mb, 0.0, 0.0, 0.0);
    if (rows.empty()) return img;
    double rmin = rows.front().ratio, rmax = rows.back().ratio;
    for (const SweepRow& r : rows) {
        rmin = std::min(rmin, r.ratio);
        rmax = std::max(rmax, r.ratio);
    }
    double omax = 1e-9;
    for (const SweepRow& r : rows) omax = std::max(omax, r.offset_max);
    double rspan = rmax - rmin < 1e-12 ? 1.0 : rmax - rmin;
    auto px = [&](double ratio) {
        return ml + static_cast<int>((w - ml - mr) * (ratio - rmin) / rspan);
    };
    auto py_off = [&](double v) {
        return h - mb - static_cast<int>((h - mt - mb) * v / omax);
    };
    auto py_unit = [&](double v) {
        return h - mb - static_cast<int>((h - mt - mb) * clamp(v, 0.0, 1.0));
    };
    char buf[64];
    for (int t = 0; t <= 4; ++t) {
        double v = omax * t / 4.0;
        int y = py_off(v);
        draw_segment(img, ml - 4, y, ml, y, 0.0, 0.0, 0.0);
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        detail::draw_label(img, buf, 8, y - 2, 0.0, 0.0, 0.0);
    }
    for (const SweepRow& r : rows) {
        int x = px(r.ratio);
        draw_segment(img, x, h - mb, x, h - mb + 4, 0.0, 0.0, 0.0);
        std::snprintf(buf, sizeof(buf), "%.2f", r.ratio);
        detail::draw_label(img, buf, x - 8, h - mb + 8, 0.0, 0.0, 0.0);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
        draw_segment(img, px(rows[i - 1].ratio), py_off(rows[i - 1].offset_mean),
                     px(rows[i].ratio), py_off(rows[i].offset_mean), 0.1, 0.2, 0.8);
        draw_segment(img, px(rows[i - 1].ratio), py_off(rows[i - 1].offset_max),
                     px(rows[i].ratio), py_off(rows[i].offset_max), 0.5, 0.6, 0.9);
        draw_segment(img, px(rows[i - 1].ratio), py_unit(rows[i - 1].iou_mean),
                     px(rows[i].ratio), py_unit(rows[i].iou_mean), 0.85, 0.25, 0.2);
    }
    for (const SweepRow& r : rows) {
        fill_rect(img, nullptr, px(r.ratio) - 1, py_off(r.offset_mean) - 1, px(r.ratio) + 2,
                  py_off(r.offset_mean) + 2, 0.1);
    }
    // legend marks: offset mean (blue), offset max (light blue), IoU (red)
    draw_segment(img, w - 150, mt + 3, w - 140, mt + 3, 0.1, 0.2, 0.8);
    draw_segment(img, w - 150, mt + 13, w - 140, mt + 13, 0.5, 0.6, 0.9);
    draw_segment(img, w - 150, mt + 23, w - 140, mt + 23, 0.85, 0.25, 0.2);
    return img;
}

}  // namespace dewarp
