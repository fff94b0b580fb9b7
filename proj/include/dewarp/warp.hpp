#pragma once

#include <algorithm>
#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/raster.hpp"

namespace dewarp {

// Normalized-to-pixel conversion snaps within 1e-9 of an integer: u*(N-1)
// does not always round-trip exactly in doubles, and integer hits must be
// exact for the identity-warp and grid-node contracts.
inline double snap_index(double v) {
    double r = std::nearbyint(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

// Bilinear lookup at pixel coords, edge-clamped. The result is pinned to the
// hull of the four taps: the exact blend never leaves it, but rounding can
// drift a ulp outside, which breaks consumers with strict range contracts.
inline double bilinear_at(const Raster& src, int c, double px, double py) {
    px = clamp(px, 0.0, src.width - 1.0);
    py = clamp(py, 0.0, src.height - 1.0);
    int x0 = src.width == 1 ? 0 : std::min(static_cast<int>(px), src.width - 2);
    int y0 = src.height == 1 ? 0 : std::min(static_cast<int>(py), src.height - 2);
    double fx = px - x0;
    double fy = py - y0;
    int x1 = src.width == 1 ? x0 : x0 + 1;
    int y1 = src.height == 1 ? y0 : y0 + 1;
    double v00 = src.at(y0, x0, c), v01 = src.at(y0, x1, c);
    double v10 = src.at(y1, x0, c), v11 = src.at(y1, x1, c);
    double v = v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) +
               v10 * (1.0 - fx) * fy + v11 * fx * fy;
    return clamp(v, std::min(std::min(v00, v01), std::min(v10, v11)),
                 std::max(std::max(v00, v01), std::max(v10, v11)));
}

// Resamples src through the field: out(p) = src at field(p). Out-of-range
// source coords are edge-clamped; mask-style compositing decisions belong to
// the caller.
inline Raster warp_raster(const Raster& src, const DeformationField& field) {
    if (src.height < 1 || src.width < 1)
        throw invalid_argument("warp_raster: empty source");
    Raster out(field.height, field.width, src.channels);
    for (int i = 0; i < field.height; ++i) {
        for (int j = 0; j < field.width; ++j) {
            const Vec2& v = field.at(i, j);
            double px = snap_index(v.x * (src.width - 1));
            double py = snap_index(v.y * (src.height - 1));
            for (int c = 0; c < src.channels; ++c)
                out.at(i, j, c) = bilinear_at(src, c, px, py);
        }
    }
    return out;
}

// Bilinear lookup of the field itself at a normalized position.
inline Vec2 field_sample(const DeformationField& f, const Vec2& u) {
    double px = snap_index(u.x * (f.width - 1));
    double py = snap_index(u.y * (f.height - 1));
    if (px < 0.0 || px > f.width - 1.0 || py < 0.0 || py > f.height - 1.0)
        throw out_of_bounds("field_sample: point outside the field extent");
    int x0 = std::min(static_cast<int>(px), f.width - 2);
    int y0 = std::min(static_cast<int>(py), f.height - 2);
    double fx = px - x0;
    double fy = py - y0;
    const Vec2& v00 = f.at(y0, x0);
    const Vec2& v01 = f.at(y0, x0 + 1);
    const Vec2& v10 = f.at(y0 + 1, x0);
    const Vec2& v11 = f.at(y0 + 1, x0 + 1);
    return Vec2(v00.x * (1 - fx) * (1 - fy) + v01.x * fx * (1 - fy) +
                    v10.x * (1 - fx) * fy + v11.x * fx * fy,
                v00.y * (1 - fx) * (1 - fy) + v01.y * fx * (1 - fy) +
                    v10.y * (1 - fx) * fy + v11.y * fx * fy);
}

// Maps normalized points through the field. Throws out_of_bounds for points
// outside [0,1]^2 (the field grid's extent).
inline std::vector<Vec2> warp_points(const std::vector<Vec2>& pts, const DeformationField& f) {
    std::vector<Vec2> out;
    out.reserve(pts.size());
    for (const Vec2& p : pts) out.push_back(field_sample(f, p));
    return out;
}

// compose(a, b): field over b's grid whose value at p is a sampled at b(p).
inline DeformationField compose_fields(const DeformationField& a, const DeformationField& b) {
    DeformationField out(b.height, b.width, a.direction);
    for (int i = 0; i < b.height; ++i)
        for (int j = 0; j < b.width; ++j) {
            Vec2 v = b.at(i, j);
            out.at(i, j) = field_sample(a, Vec2(clamp(v.x, 0.0, 1.0), clamp(v.y, 0.0, 1.0)));
        }
    return out;
}

}  // namespace dewarp
