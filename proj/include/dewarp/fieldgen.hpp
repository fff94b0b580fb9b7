#pragma once

#include <algorithm>
#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/warp.hpp"

namespace dewarp {

// Synthetic backward field: identity + a handful of low-frequency sinusoid
// displacement modes + a mild projective term. severity 0 is the exact
// identity; severity 1 stays comfortably inside the [-0.25, 1.25] value range
// and the 4/min(H,W) adjacent-jump bound.
inline DeformationField generate_field(std::uint64_t seed, int height, int width,
                                       double severity) {
    if (height < 32 || width < 32)
        throw invalid_argument("generate_field: dims must be at least 32");
    if (!(severity >= 0.0 && severity <= 1.0))
        throw invalid_argument("generate_field: severity must be in [0,1]");

    Rng rng(seed, 0x7BB4D3A1u);
    struct Mode {
        double fx, fy, ax, ay, phase;
    };
    int n_modes = 3 + static_cast<int>(rng.below(4));
    std::vector<Mode> modes(n_modes);
    double weight_sum = 0.0;
    std::vector<double> weights(n_modes);
    for (int k = 0; k < n_modes; ++k) {
        Mode& m = modes[k];
        m.fx = rng.below(3);
        m.fy = rng.below(3);
        if (m.fx == 0.0 && m.fy == 0.0) m.fx = 1.0;
        m.ax = rng.uniform(-1.0, 1.0);
        m.ay = rng.uniform(-1.0, 1.0);
        m.phase = rng.uniform(0.0, 2.0 * kPi);
        weights[k] = 1.0 / (1.0 + m.fx * m.fx + m.fy * m.fy);
        weight_sum += weights[k];
    }
    const double amp_budget = 0.12 * severity;
    for (int k = 0; k < n_modes; ++k) {
        double s = amp_budget * weights[k] / weight_sum;
        modes[k].ax *= s;
        modes[k].ay *= s;
    }

    // Projective term about the page center; coefficients keep both the
    // displacement and its gradient small.
    double pa = severity * 0.04 * rng.uniform(-1.0, 1.0);
    double pb = severity * 0.04 * rng.uniform(-1.0, 1.0);
    double pc = severity * 0.04 * rng.uniform(-1.0, 1.0);
    double pd = severity * 0.04 * rng.uniform(-1.0, 1.0);
    double ptx = severity * 0.015 * rng.uniform(-1.0, 1.0);
    double pty = severity * 0.015 * rng.uniform(-1.0, 1.0);
    double pe = severity * 0.06 * rng.uniform(-1.0, 1.0);
    double pf = severity * 0.06 * rng.uniform(-1.0, 1.0);

    DeformationField field(height, width, Direction::Backward);
    for (int i = 0; i < height; ++i) {
        double v = i / (height - 1.0);
        for (int j = 0; j < width; ++j) {
            double u = j / (width - 1.0);
            double dx = 0.0, dy = 0.0;
            for (const Mode& m : modes) {
                double s = std::sin(2.0 * kPi * (m.fx * u + m.fy * v) + m.phase);
                dx += m.ax * s;
                dy += m.ay * s;
            }
            double cu = u - 0.5, cv = v - 0.5;
            double denom = 1.0 + pe * cu + pf * cv;
            dx += ((1.0 + pa) * cu + pb * cv + ptx) / denom - cu;
            dy += (pc * cu + (1.0 + pd) * cv + pty) / denom - cv;
            field.at(i, j) = Vec2(u + dx, v + dy);
        }
    }
    return field;
}

namespace detail {

struct Anchor {
    Vec2 p;  // position in the value (source) space
    Vec2 d;  // residual displacement: grid position minus p
};

// Uniform-bucket index over anchor positions with an expanding ring search.
class AnchorIndex {
public:
    explicit AnchorIndex(const std::vector<Anchor>& anchors) : anchors_(anchors) {
        double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
        for (const Anchor& a : anchors_) {
            min_x = std::min(min_x, a.p.x);
            min_y = std::min(min_y, a.p.y);
            max_x = std::max(max_x, a.p.x);
            max_y = std::max(max_y, a.p.y);
        }
        origin_ = Vec2(min_x, min_y);
        double span_x = std::max(max_x - min_x, 1e-9);
        double span_y = std::max(max_y - min_y, 1e-9);
        grid_ = std::max(1, static_cast<int>(std::sqrt(anchors_.size() / 2.0)));
        cell_x_ = span_x / grid_;
        cell_y_ = span_y / grid_;
        buckets_.assign(static_cast<std::size_t>(grid_) * grid_, {});
        for (std::size_t i = 0; i < anchors_.size(); ++i) {
            auto [bx, by] = bucket_of(anchors_[i].p);
            buckets_[static_cast<std::size_t>(by) * grid_ + bx].push_back(static_cast<int>(i));
        }
    }

    // k nearest anchors to q; returns indices (size min(k, n)).
    void nearest(const Vec2& q, int k, std::vector<int>& out) const {
        out.clear();
        auto [qx, qy] = bucket_of(q);
        // (dist2, idx) pairs kept sorted, small k so linear insert is fine
        struct Best {
            double d2;
            int idx;
        };
        std::vector<Best> best;
        best.reserve(k + 1);
        double cell_min = std::min(cell_x_, cell_y_);
        for (int ring = 0; ring < 2 * grid_; ++ring) {
            bool any_cell = false;
            for (int by = qy - ring; by <= qy + ring; ++by) {
                if (by < 0 || by >= grid_) continue;
                for (int bx = qx - ring; bx <= qx + ring; ++bx) {
                    if (bx < 0 || bx >= grid_) continue;
                    if (std::max(std::abs(bx - qx), std::abs(by - qy)) != ring) continue;
                    any_cell = true;
                    for (int idx : buckets_[static_cast<std::size_t>(by) * grid_ + bx]) {
                        double d2 = (anchors_[idx].p - q).norm2();
                        if (static_cast<int>(best.size()) == k && d2 >= best.back().d2) continue;
                        auto pos = std::upper_bound(
                            best.begin(), best.end(), d2,
                            [](double v, const Best& b) { return v < b.d2; });
                        best.insert(pos, {d2, idx});
                        if (static_cast<int>(best.size()) > k) best.pop_back();
                    }
                }
            }
            if (static_cast<int>(best.size()) == k) {
                // Everything beyond this ring is at least (ring)*cell away.
                double safe = ring * cell_min;
                if (best.back().d2 <= safe * safe) break;
            }
            if (!any_cell && ring > 2 * grid_) break;
        }
        for (const Best& b : best) out.push_back(b.idx);
    }

private:
    std::pair<int, int> bucket_of(const Vec2& p) const {
        int bx = clamp_int(static_cast<int>((p.x - origin_.x) / cell_x_), 0, grid_ - 1);
        int by = clamp_int(static_cast<int>((p.y - origin_.y) / cell_y_), 0, grid_ - 1);
        return {bx, by};
    }

    const std::vector<Anchor>& anchors_;
    Vec2 origin_;
    double cell_x_ = 1.0, cell_y_ = 1.0;
    int grid_ = 1;
    std::vector<std::vector<int>> buckets_;
};

}  // namespace detail

// Inverts a backward field by sampling roughly a `ratio` fraction of its
// cells as anchors and inverse-distance-weighting their residual
// displacements (k = 4, power 4). Interpolating displacements rather than
// coords makes identity and pure translations invert exactly. The high
// power matters: it ties each estimate to its nearest anchors, so the error
// shrinks with the anchor stride. A gentler kernel averages across the
// whole constellation, whose geometry-dependent bias does not.
inline DeformationField invert_field(const DeformationField& bm, double ratio = 0.4) {
    if (bm.direction != Direction::Backward)
        throw invalid_argument("invert_field: input must be a backward field");
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw invalid_argument("invert_field: ratio must be in (0, 1]");

    // Stratified selection: rows and columns are each kept at fraction
    // sqrt(ratio), so anchors form a near-square lattice whose spacing
    // shrinks steadily as the ratio grows. A row-major 1D selection would
    // space anchors ratio-dependently anisotropically, and the k-nearest
    // interpolation error then does not decrease monotonically in the ratio.
    double side = std::sqrt(ratio);
    auto kept = [side](int k) {
        return k == 0 || static_cast<long long>((k + 1) * side) >
                             static_cast<long long>(k * side);
    };
    std::vector<bool> keep_col(bm.width);
    for (int j = 0; j < bm.width; ++j) keep_col[j] = kept(j);

    std::vector<detail::Anchor> anchors;
    anchors.reserve(static_cast<std::size_t>(bm.height * bm.width * ratio) + 8);
    for (int i = 0; i < bm.height; ++i) {
        if (!kept(i)) continue;
        for (int j = 0; j < bm.width; ++j) {
            if (!keep_col[j]) continue;
            Vec2 grid_pos(j / (bm.width - 1.0), i / (bm.height - 1.0));
            Vec2 p = bm.at(i, j);
            anchors.push_back({p, grid_pos - p});
        }
    }
    detail::AnchorIndex index(anchors);

    DeformationField fm(bm.height, bm.width, Direction::Forward);
    std::vector<int> knn;
    for (int i = 0; i < fm.height; ++i) {
        for (int j = 0; j < fm.width; ++j) {
            Vec2 u(j / (fm.width - 1.0), i / (fm.height - 1.0));
            index.nearest(u, 4, knn);
            double wsum = 0.0;
            Vec2 dsum;
            bool exact = false;
            for (int idx : knn) {
                double d2 = (anchors[idx].p - u).norm2();
                if (d2 < 1e-24) {
                    fm.at(i, j) = u + anchors[idx].d;
                    exact = true;
                    break;
                }
                double w = 1.0 / (d2 * d2);
                wsum += w;
                dsum += w * anchors[idx].d;
            }
            if (!exact) fm.at(i, j) = u + dsum * (1.0 / wsum);
        }
    }
    return fm;
}

// Sub-window copy. Values are untouched: they reference the unchanged flat
// source, so warping with the cropped field equals cropping the warp output.
struct CropRect {
    int x = 0, y = 0, width = 0, height = 0;
};

inline DeformationField crop_augment(const DeformationField& bm, const CropRect& rect) {
    if (bm.direction != Direction::Backward)
        throw invalid_argument("crop_augment: input must be a backward field");
    if (rect.x < 0 || rect.y < 0 || rect.width < 2 || rect.height < 2 ||
        rect.x + rect.width > bm.width || rect.y + rect.height > bm.height)
        throw invalid_argument("crop_augment: rect outside the field grid");
    if (static_cast<double>(rect.width) * rect.height <
        0.75 * static_cast<double>(bm.width) * bm.height)
        throw invalid_argument("crop_augment: rect must cover at least 75% of the area");
    DeformationField out(rect.height, rect.width, Direction::Backward);
    for (int i = 0; i < rect.height; ++i)
        for (int j = 0; j < rect.width; ++j)
            out.at(i, j) = bm.at(rect.y + i, rect.x + j);
    return out;
}

// Convex per-cell blend of two backward fields. Computed as a + (1-w)(b-a)
// so equal inputs reproduce exactly. Blending two in-range fields is again
// in-range; the displacement rescale below is a guard for callers feeding
// values at the very edge of the allowed range.
inline DeformationField overlap_augment(const DeformationField& a, const DeformationField& b,
                                        double weight) {
    if (a.direction != Direction::Backward || b.direction != Direction::Backward)
        throw invalid_argument("overlap_augment: inputs must be backward fields");
    if (a.height != b.height || a.width != b.width)
        throw invalid_argument("overlap_augment: field dims must match");
    if (!(weight >= 0.0 && weight <= 1.0))
        throw invalid_argument("overlap_augment: weight must be in [0,1]");
    DeformationField out(a.height, a.width, Direction::Backward);
    double overshoot = 0.0;
    for (std::size_t i = 0; i < out.coords.size(); ++i) {
        Vec2 v = a.coords[i] + (1.0 - weight) * (b.coords[i] - a.coords[i]);
        out.coords[i] = v;
        overshoot = std::max({overshoot, -0.25 - v.x, v.x - 1.25, -0.25 - v.y, v.y - 1.25});
    }
    if (overshoot > 0.0) {
        // Shrink displacements about the identity until every cell fits.
        DeformationField id = DeformationField::identity(out.height, out.width);
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (lo + hi);
            double worst = 0.0;
            for (std::size_t i = 0; i < out.coords.size(); ++i) {
                Vec2 v = id.coords[i] + mid * (out.coords[i] - id.coords[i]);
                worst = std::max({worst, -0.25 - v.x, v.x - 1.25, -0.25 - v.y, v.y - 1.25});
            }
            if (worst > 0.0) hi = mid; else lo = mid;
        }
        for (std::size_t i = 0; i < out.coords.size(); ++i)
            out.coords[i] = id.coords[i] + lo * (out.coords[i] - id.coords[i]);
    }
    return out;
}

}  // namespace dewarp
