#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <vector>

#include "dewarp/raster.hpp"

namespace dewarp {

struct Segment {
    Vec2 a, b;
    double strength = 1.0;

    double length() const { return (b - a).norm(); }

    // Unsigned slope; vertical treated as +infinity.
    double abs_slope() const {
        double dx = std::abs(b.x - a.x);
        double dy = std::abs(b.y - a.y);
        if (dx == 0.0) return std::numeric_limits<double>::infinity();
        return dy / dx;
    }
};

// Sobel magnitude with two-threshold hysteresis (thresholds are fractions of
// the max gradient). Returns a binary raster; a constant image yields all
// zeros.
inline Raster detect_edges(const Raster& img, double t_low = 0.1, double t_high = 0.2) {
    if (!(t_low > 0.0 && t_low < t_high && t_high <= 1.0))
        throw invalid_argument("detect_edges: need 0 < t_low < t_high <= 1");
    if (img.height < 3 || img.width < 3)
        throw invalid_argument("detect_edges: image too small");
    Raster lum = img.luma();
    int h = lum.height, w = lum.width;
    std::vector<double> mag(static_cast<std::size_t>(h) * w, 0.0);
    double max_mag = 0.0;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            double gx = (lum.at(y - 1, x + 1) + 2.0 * lum.at(y, x + 1) + lum.at(y + 1, x + 1)) -
                        (lum.at(y - 1, x - 1) + 2.0 * lum.at(y, x - 1) + lum.at(y + 1, x - 1));
            double gy = (lum.at(y + 1, x - 1) + 2.0 * lum.at(y + 1, x) + lum.at(y + 1, x + 1)) -
                        (lum.at(y - 1, x - 1) + 2.0 * lum.at(y - 1, x) + lum.at(y - 1, x + 1));
            double m = std::sqrt(gx * gx + gy * gy);
            mag[static_cast<std::size_t>(y) * w + x] = m;
            max_mag = std::max(max_mag, m);
        }
    }
    Raster out = Raster::zeros(h, w, 1);
    if (max_mag == 0.0) return out;
    double lo = t_low * max_mag, hi = t_high * max_mag;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mag[static_cast<std::size_t>(y) * w + x] >= hi) {
                out.at(y, x) = 1.0;
                queue.emplace_back(y, x);
            }
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                if (out.at(ny, nx) != 0.0) continue;
                if (mag[static_cast<std::size_t>(ny) * w + nx] >= lo) {
                    out.at(ny, nx) = 1.0;
                    queue.emplace_back(ny, nx);
                }
            }
        }
    }
    return out;
}

struct SegmentOptions {
    double min_length = 10.0;     // px, along the principal axis
    double max_rms = 1.5;         // px, perpendicular residual
    double angle_tol_deg = 22.5;  // orientation agreement while growing
    double merge_angle_deg = 5.0;
    double merge_offset = 2.5;  // px, centerline distance for the bridge merge
    double merge_gap = 8.0;     // px, allowed along-axis gap
};

namespace detail {

// Second-moment accumulator; segments are fitted and merged on these.
struct Moments {
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;

    void add(double x, double y) {
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }

    void merge(const Moments& o) {
        n += o.n;
        sx += o.sx;
        sy += o.sy;
        sxx += o.sxx;
        sxy += o.sxy;
        syy += o.syy;
    }

    // Principal direction of the scatter, angle in [0, pi).
    double angle() const {
        double mx = sx / n, my = sy / n;
        double cxx = sxx / n - mx * mx;
        double cxy = sxy / n - mx * my;
        double cyy = syy / n - my * my;
        double th = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
        if (th < 0.0) th += kPi;
        return th;
    }
};

inline double angle_diff(double a, double b) {
    double d = std::fmod(std::abs(a - b), kPi);
    return std::min(d, kPi - d);
}

struct Region {
    Moments m;
    double min_proj = 0, max_proj = 0;  // along the fitted axis, about the mean
    double rms = 0;
    Vec2 e0, e1;

    void fit(const std::vector<Vec2>& px) {
        double th = m.angle();
        Vec2 dir(std::cos(th), std::sin(th));
        Vec2 mean(m.sx / m.n, m.sy / m.n);
        min_proj = 1e30;
        max_proj = -1e30;
        double perp2 = 0.0;
        for (const Vec2& p : px) {
            Vec2 d = p - mean;
            double t = d.dot(dir);
            double q = -d.x * dir.y + d.y * dir.x;
            min_proj = std::min(min_proj, t);
            max_proj = std::max(max_proj, t);
            perp2 += q * q;
        }
        rms = std::sqrt(perp2 / m.n);
        e0 = mean + dir * min_proj;
        e1 = mean + dir * max_proj;
    }

    double span() const { return max_proj - min_proj; }
};

}  // namespace detail

// Groups edge pixels into straight segments: per-pixel orientation from a 5x5
// scatter, region growth over 8-neighbors whose orientation agrees with the
// region mean, principal-axis fit with length/residual gates, then a bridge
// merge that fuses collinear fragments (junction splits and the two side
// chains of a 1-px stroke).
inline std::vector<Segment> detect_segments(const Raster& edges,
                                            const SegmentOptions& opt = {}) {
    if (edges.channels != 1)
        throw invalid_argument("detect_segments: edge map must be single-channel");
    if (!(opt.min_length > 0.0) || !(opt.max_rms > 0.0))
        throw invalid_argument("detect_segments: gates must be positive");
    int h = edges.height, w = edges.width;
    auto is_edge = [&](int y, int x) { return edges.at(y, x) > 0.5; };

    // Per-pixel orientation in double-angle space; undefined entries excluded.
    std::vector<double> c2(static_cast<std::size_t>(h) * w, 0.0);
    std::vector<double> s2(static_cast<std::size_t>(h) * w, 0.0);
    std::vector<std::uint8_t> defined(static_cast<std::size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!is_edge(y, x)) continue;
            detail::Moments m;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) {
                    int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (is_edge(ny, nx)) m.add(nx, ny);
                }
            if (m.n < 3) continue;
            double mx = m.sx / m.n, my = m.sy / m.n;
            double cxx = m.sxx / m.n - mx * mx;
            double cxy = m.sxy / m.n - mx * my;
            double cyy = m.syy / m.n - my * my;
            if (std::abs(cxy) < 1e-12 && std::abs(cxx - cyy) < 1e-12) continue;
            double th = m.angle();
            std::size_t i = static_cast<std::size_t>(y) * w + x;
            c2[i] = std::cos(2.0 * th);
            s2[i] = std::sin(2.0 * th);
            defined[i] = 1;
        }
    }

    double tol = opt.angle_tol_deg * kPi / 180.0;
    std::vector<std::uint8_t> used(static_cast<std::size_t>(h) * w, 0);
    std::vector<detail::Region> regions;
    std::vector<std::vector<Vec2>> region_pixels;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
            if (!defined[i0] || used[i0]) continue;
            double rc = c2[i0], rs = s2[i0];
            std::vector<Vec2> px;
            used[i0] = 1;
            stack.assign(1, {y0, x0});
            px.push_back(Vec2(x0, y0));
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                double region_angle = 0.5 * std::atan2(rs, rc);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (!defined[ni] || used[ni]) continue;
                        double na = 0.5 * std::atan2(s2[ni], c2[ni]);
                        if (detail::angle_diff(na, region_angle) > tol) continue;
                        used[ni] = 1;
                        rc += c2[ni];
                        rs += s2[ni];
                        stack.push_back({ny, nx});
                        px.push_back(Vec2(nx, ny));
                    }
                }
            }
            if (px.size() < 3) continue;
            detail::Region r;
            for (const Vec2& p : px) r.m.add(p.x, p.y);
            r.fit(px);
            if (r.rms > opt.max_rms) continue;
            regions.push_back(r);
            region_pixels.push_back(std::move(px));
        }
    }

    // Bridge merge over collinear fragment pairs, to a fixpoint.
    double merge_angle = opt.merge_angle_deg * kPi / 180.0;
    auto point_line_dist = [](const Vec2& p, const detail::Region& r) {
        Vec2 dir = r.e1 - r.e0;
        double len = dir.norm();
        if (len < 1e-9) return (p - r.e0).norm();
        return std::abs(-(p.x - r.e0.x) * dir.y / len + (p.y - r.e0.y) * dir.x / len);
    };
    std::vector<std::uint8_t> dead(regions.size(), 0);
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < regions.size() && !changed; ++i) {
            if (dead[i]) continue;
            for (std::size_t j = i + 1; j < regions.size(); ++j) {
                if (dead[j]) continue;
                detail::Region &a = regions[i], &b = regions[j];
                if (detail::angle_diff(a.m.angle(), b.m.angle()) > merge_angle) continue;
                Vec2 mid_a = (a.e0 + a.e1) * 0.5, mid_b = (b.e0 + b.e1) * 0.5;
                if (point_line_dist(mid_b, a) > opt.merge_offset ||
                    point_line_dist(mid_a, b) > opt.merge_offset)
                    continue;
                double th = a.m.angle();
                Vec2 dir(std::cos(th), std::sin(th));
                double a_lo = std::min(a.e0.dot(dir), a.e1.dot(dir));
                double a_hi = std::max(a.e0.dot(dir), a.e1.dot(dir));
                double b_lo = std::min(b.e0.dot(dir), b.e1.dot(dir));
                double b_hi = std::max(b.e0.dot(dir), b.e1.dot(dir));
                double gap = std::max(b_lo - a_hi, a_lo - b_hi);
                if (gap > opt.merge_gap) continue;
                a.m.merge(b.m);
                region_pixels[i].insert(region_pixels[i].end(), region_pixels[j].begin(),
                                        region_pixels[j].end());
                a.fit(region_pixels[i]);
                dead[j] = 1;
                changed = true;
                break;
            }
        }
    }

    std::vector<Segment> out;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (dead[i]) continue;
        detail::Region& r = regions[i];
        if (r.span() < opt.min_length || r.rms > opt.max_rms) continue;
        Segment s;
        s.a = r.e0;
        s.b = r.e1;
        if (s.b.x < s.a.x || (s.b.x == s.a.x && s.b.y < s.a.y)) std::swap(s.a, s.b);
        s.strength = 1.0;
        out.push_back(s);
    }

    // Where strokes cross, the chain tracker stops a few pixels short of the
    // junction (the crossing stroke owns those pixels). Pull an endpoint onto
    // the intersection with a crossing segment when that intersection is just
    // beyond it and the partner actually spans the spot.
    const double kReach = 6.0;   // px an endpoint may extend
    const double kInward = 1.0;  // px an endpoint may retract
    const double kMinSin = 0.5;  // crossing angle at least 30 degrees
    const double kCover = 2.0;   // partner span slack at the junction
    for (Segment& s : out) {
        Vec2 d = s.b - s.a;
        double len = d.norm();
        if (len < 1e-9) continue;
        d = d * (1.0 / len);
        for (int end = 0; end < 2; ++end) {
            Vec2& e = end ? s.b : s.a;
            Vec2 outward = end ? d : d * -1.0;
            double best_u = kReach;
            bool found = false;
            for (const Segment& t : out) {
                if (&t == &s) continue;
                Vec2 q = t.b - t.a;
                double tlen = q.norm();
                if (tlen < 1e-9) continue;
                q = q * (1.0 / tlen);
                double denom = outward.x * q.y - outward.y * q.x;
                if (std::abs(denom) < kMinSin) continue;
                Vec2 r = t.a - e;
                double u = (r.x * q.y - r.y * q.x) / denom;
                double v = (r.x * outward.y - r.y * outward.x) / denom;
                if (u < -kInward || u > best_u) continue;
                if (v < -kCover || v > tlen + kCover) continue;
                best_u = u;
                found = true;
            }
            if (found) e += outward * best_u;
        }
    }

    // Longest first: the downstream duplicate filter keeps the earliest
    // survivor of each family, and a short stray stroke must not eliminate a
    // full-length ruling sharing its carrier line.
    std::sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) {
        double la = (a.b - a.a).norm2(), lb = (b.b - b.a).norm2();
        if (la != lb) return la > lb;
        if (a.a.y != b.a.y) return a.a.y < b.a.y;
        if (a.a.x != b.a.x) return a.a.x < b.a.x;
        if (a.b.y != b.b.y) return a.b.y < b.b.y;
        return a.b.x < b.b.x;
    });
    return out;
}

struct FilterOptions {
    double alpha = 0.2;           // keep slopes strictly below
    double beta = 5.0;            // or strictly above
    double eps_slope = 0.05;      // duplicate slope tolerance
    double delta_intercept = 3.0; // duplicate intercept tolerance, px
};

namespace detail {

// Signed slope/intercept in the frame that keeps them finite: standard
// y = m x + c when |dy| <= |dx|, transposed x = m y + c otherwise.
struct LineFrame {
    bool transposed = false;
    double m = 0.0, c = 0.0;
};

inline LineFrame line_frame(const Segment& s) {
    LineFrame f;
    double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
    f.transposed = std::abs(dy) > std::abs(dx);
    if (!f.transposed) {
        f.m = dy / dx;
        f.c = s.a.y - f.m * s.a.x;
    } else {
        f.m = dx / dy;
        f.c = s.a.x - f.m * s.a.y;
    }
    return f;
}

inline bool duplicate_pair(const Segment& a, const Segment& b, double eps_slope,
                           double delta) {
    LineFrame fa = line_frame(a), fb = line_frame(b);
    if (fa.transposed != fb.transposed) return false;
    return std::abs(fa.m - fb.m) < eps_slope && std::abs(fa.c - fb.c) < delta;
}

}  // namespace detail

// Slope gate (keep |slope| < alpha or > beta) followed by first-come
// slope/intercept dedup among the survivors. Near-vertical pairs are compared
// in the transposed frame.
inline std::vector<Segment> filter_segments(const std::vector<Segment>& segments,
                                            const FilterOptions& opt = {}) {
    if (!(opt.alpha > 0.0) || !(opt.beta > opt.alpha))
        throw invalid_argument("filter_segments: need 0 < alpha < beta");
    if (!(opt.eps_slope >= 0.0) || !(opt.delta_intercept >= 0.0))
        throw invalid_argument("filter_segments: tolerances must be non-negative");
    std::vector<Segment> kept;
    for (const Segment& s : segments) {
        double slope = s.abs_slope();
        if (!(slope < opt.alpha || slope > opt.beta)) continue;
        bool dup = false;
        for (const Segment& k : kept) {
            if (detail::duplicate_pair(k, s, opt.eps_slope, opt.delta_intercept)) {
                dup = true;
                break;
            }
        }
        if (!dup) kept.push_back(s);
    }
    return kept;
}

}  // namespace dewarp
