#pragma once

#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/lines.hpp"
#include "dewarp/raster.hpp"
#include "dewarp/warp.hpp"

namespace dewarp {

// Mean absolute difference between the predicted map and the reference mask.
// Accepts a single-channel map directly, or 2-channel logits-shaped scores
// compared against the one-hot expansion {1-m, m} of the mask.
inline double seg_loss(const Raster& pred, const Raster& gt_mask) {
    if (gt_mask.channels != 1)
        throw invalid_argument("seg_loss: ground-truth mask must be single-channel");
    if (pred.height != gt_mask.height || pred.width != gt_mask.width)
        throw invalid_argument("seg_loss: spatial dims must match");
    if (pred.channels != 1 && pred.channels != 2)
        throw invalid_argument("seg_loss: prediction must have 1 or 2 channels");
    double acc = 0.0;
    if (pred.channels == 1) {
        for (std::size_t i = 0; i < pred.data.size(); ++i)
            acc += std::abs(pred.data[i] - gt_mask.data[i]);
        return acc / static_cast<double>(pred.data.size());
    }
    for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
            double m = gt_mask.at(y, x);
            acc += std::abs(pred.at(y, x, 0) - (1.0 - m));
            acc += std::abs(pred.at(y, x, 1) - m);
        }
    }
    return acc / static_cast<double>(pred.data.size());
}

// Temperature-softened foreground probability: softmax(gamma * logits)
// channel 1.
inline Raster smooth_mask(const Raster& logits, double gamma = 0.8) {
    if (logits.channels != 2)
        throw invalid_argument("smooth_mask: expected 2-channel logits");
    if (!(gamma > 0.0))
        throw invalid_argument("smooth_mask: gamma must be positive");
    Raster out(logits.height, logits.width, 1);
    for (int y = 0; y < logits.height; ++y) {
        for (int x = 0; x < logits.width; ++x) {
            double a = gamma * logits.at(y, x, 0);
            double b = gamma * logits.at(y, x, 1);
            double m = std::max(a, b);
            double ea = std::exp(a - m), eb = std::exp(b - m);
            out.at(y, x) = eb / (ea + eb);
        }
    }
    return out;
}

// Mean absolute coordinate difference over all cells and both components.
inline double map_loss(const DeformationField& pred, const DeformationField& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw invalid_argument("map_loss: field dims must match");
    if (pred.direction != gt.direction)
        throw invalid_argument("map_loss: field directions must match");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.coords.size(); ++i) {
        acc += std::abs(pred.coords[i].x - gt.coords[i].x);
        acc += std::abs(pred.coords[i].y - gt.coords[i].y);
    }
    return acc / (2.0 * static_cast<double>(pred.coords.size()));
}

// Arc-length resampling: points at multiples of interval from the start, the
// endpoint always included.
inline ControlPointSet sample_line(const LineElement& line, double interval = 4.0) {
    if (!(interval > 0.0))
        throw invalid_argument("sample_line: interval must be positive");
    line.validate();
    double total = line.arc_length();
    if (total < 2.0 * interval)
        throw line_too_short("sample_line: arc length below 2*interval");
    ControlPointSet cps;
    cps.interval = interval;
    std::size_t seg = 0;
    double seg_start = 0.0;
    double seg_len = (line.points[1] - line.points[0]).norm();
    for (double s = 0.0; s < total - 1e-9; s += interval) {
        while (s > seg_start + seg_len && seg + 2 < line.points.size()) {
            seg_start += seg_len;
            ++seg;
            seg_len = (line.points[seg + 1] - line.points[seg]).norm();
        }
        double t = clamp((s - seg_start) / seg_len, 0.0, 1.0);
        cps.points.push_back(line.points[seg] + t * (line.points[seg + 1] - line.points[seg]));
    }
    if ((cps.points.back() - line.points.back()).norm() < 1e-6) cps.points.pop_back();
    cps.points.push_back(line.points.back());
    return cps;
}

// Discrete curvature under unit-step parameterization:
//   k_i = |x'y'' - y'x''| / ((x'^2 + y'^2)^{3/2} + eps)
// with central differences in the interior and one-sided stencils at the two
// ends (second derivative borrowed from the adjacent interior point).
inline std::vector<double> curvature(const std::vector<Vec2>& pts, double eps = 1e-4) {
    std::size_t n = pts.size();
    if (n < 3) throw invalid_argument("curvature: needs at least 3 points");
    if (!(eps > 0.0)) throw invalid_argument("curvature: eps must be positive");
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a, b, c, d;  // x', y', x'', y''
        if (i == 0) {
            a = pts[1].x - pts[0].x;
            b = pts[1].y - pts[0].y;
            c = pts[2].x - 2.0 * pts[1].x + pts[0].x;
            d = pts[2].y - 2.0 * pts[1].y + pts[0].y;
        } else if (i == n - 1) {
            a = pts[n - 1].x - pts[n - 2].x;
            b = pts[n - 1].y - pts[n - 2].y;
            c = pts[n - 1].x - 2.0 * pts[n - 2].x + pts[n - 3].x;
            d = pts[n - 1].y - 2.0 * pts[n - 2].y + pts[n - 3].y;
        } else {
            a = 0.5 * (pts[i + 1].x - pts[i - 1].x);
            b = 0.5 * (pts[i + 1].y - pts[i - 1].y);
            c = pts[i + 1].x - 2.0 * pts[i].x + pts[i - 1].x;
            d = pts[i + 1].y - 2.0 * pts[i].y + pts[i - 1].y;
        }
        double u = a * d - b * c;
        double denom = std::pow(a * a + b * b, 1.5) + eps;
        out[i] = std::abs(u) / denom;
    }
    return out;
}

enum class CurvatureMode : std::uint8_t {
    Absolute,  // mean |k_pred - k_ref|, the default objective
    Signed     // literal mean (k_pred - k_ref)
};

// kink_delta > 0 replaces |.| in Absolute mode with its Huber smoothing of
// that width (quadratic inside, |.| - delta/2 outside). The default 0 keeps
// the exact absolute mismatch.
inline double curvature_loss(const std::vector<Vec2>& pred, const std::vector<Vec2>& ref,
                             double eps = 1e-4, CurvatureMode mode = CurvatureMode::Absolute,
                             double kink_delta = 0.0) {
    if (pred.size() != ref.size())
        throw invalid_argument("curvature_loss: point counts must match");
    std::vector<double> kp = curvature(pred, eps);
    std::vector<double> kr = curvature(ref, eps);
    double acc = 0.0;
    for (std::size_t i = 0; i < kp.size(); ++i) {
        double d = kp[i] - kr[i];
        if (mode != CurvatureMode::Absolute)
            acc += d;
        else if (kink_delta > 0.0 && std::abs(d) <= kink_delta)
            acc += d * d / (2.0 * kink_delta);
        else
            acc += std::abs(d) - (kink_delta > 0.0 ? 0.5 * kink_delta : 0.0);
    }
    return acc / static_cast<double>(kp.size() - 1);
}

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

// d(curvature_loss)/d(pred points), chain rule through the difference
// stencils. With kink_delta = 0 this is the exact subgradient of Absolute
// mode, zero at the |.| kinks. With kink_delta > 0 it is the exact gradient
// of the Huber-smoothed loss: the force ramps down linearly inside the
// smoothing width instead of flipping sign at full strength, so a guarded
// descent can settle there.
inline std::vector<Vec2> curvature_loss_grad(const std::vector<Vec2>& pred,
                                             const std::vector<Vec2>& ref, double eps = 1e-4,
                                             CurvatureMode mode = CurvatureMode::Absolute,
                                             double kink_delta = 0.0) {
    if (pred.size() != ref.size())
        throw invalid_argument("curvature_loss_grad: point counts must match");
    std::vector<double> kp = curvature(pred, eps);
    std::vector<double> kr = curvature(ref, eps);
    std::size_t n = pred.size();
    std::vector<Vec2> grad(n, Vec2{});
    double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        double diff = kp[i] - kr[i];
        double dli = mode == CurvatureMode::Absolute ? detail::sgn(diff) * inv : inv;
        if (dli == 0.0) continue;
        if (kink_delta > 0.0 && mode == CurvatureMode::Absolute)
            dli *= std::min(1.0, std::abs(diff) / kink_delta);
        double a, b, c, d;
        if (i == 0) {
            a = pred[1].x - pred[0].x;
            b = pred[1].y - pred[0].y;
            c = pred[2].x - 2.0 * pred[1].x + pred[0].x;
            d = pred[2].y - 2.0 * pred[1].y + pred[0].y;
        } else if (i == n - 1) {
            a = pred[n - 1].x - pred[n - 2].x;
            b = pred[n - 1].y - pred[n - 2].y;
            c = pred[n - 1].x - 2.0 * pred[n - 2].x + pred[n - 3].x;
            d = pred[n - 1].y - 2.0 * pred[n - 2].y + pred[n - 3].y;
        } else {
            a = 0.5 * (pred[i + 1].x - pred[i - 1].x);
            b = 0.5 * (pred[i + 1].y - pred[i - 1].y);
            c = pred[i + 1].x - 2.0 * pred[i].x + pred[i - 1].x;
            d = pred[i + 1].y - 2.0 * pred[i].y + pred[i - 1].y;
        }
        double u = a * d - b * c;
        double su = detail::sgn(u);
        double speed2 = a * a + b * b;
        double root = std::sqrt(speed2);
        double denom = speed2 * root + eps;
        double inv_denom = 1.0 / denom;
        double dk_da = (su * d * denom - std::abs(u) * 3.0 * a * root) * inv_denom * inv_denom;
        double dk_db = (-su * c * denom - std::abs(u) * 3.0 * b * root) * inv_denom * inv_denom;
        double dk_dc = -su * b * inv_denom;
        double dk_dd = su * a * inv_denom;
        double gx_d1 = dli * dk_da;  // dL/d(x'_i)
        double gy_d1 = dli * dk_db;
        double gx_d2 = dli * dk_dc;  // dL/d(x''_i)
        double gy_d2 = dli * dk_dd;
        if (i == 0) {
            grad[0].x += -gx_d1 + gx_d2;
            grad[1].x += gx_d1 - 2.0 * gx_d2;
            grad[2].x += gx_d2;
            grad[0].y += -gy_d1 + gy_d2;
            grad[1].y += gy_d1 - 2.0 * gy_d2;
            grad[2].y += gy_d2;
        } else if (i == n - 1) {
            grad[n - 1].x += gx_d1 + gx_d2;
            grad[n - 2].x += -gx_d1 - 2.0 * gx_d2;
            grad[n - 3].x += gx_d2;
            grad[n - 1].y += gy_d1 + gy_d2;
            grad[n - 2].y += -gy_d1 - 2.0 * gy_d2;
            grad[n - 3].y += gy_d2;
        } else {
            grad[i + 1].x += 0.5 * gx_d1 + gx_d2;
            grad[i - 1].x += -0.5 * gx_d1 + gx_d2;
            grad[i].x += -2.0 * gx_d2;
            grad[i + 1].y += 0.5 * gy_d1 + gy_d2;
            grad[i - 1].y += -0.5 * gy_d1 + gy_d2;
            grad[i].y += -2.0 * gy_d2;
        }
    }
    return grad;
}

struct LineSupervisionResult {
    double loss = 0.0;
    int lines_used = 0;
    int lines_skipped = 0;  // arc length below 2*interval
    bool empty = true;      // no usable lines: loss is 0 and should be flagged
};

// Curvature consistency between the two fields along the document lines.
// Lines too short for the sampling interval are skipped (counted) so the
// interval ablation stays runnable.
inline LineSupervisionResult line_supervision(const DeformationField& pred_bm,
                                              const DeformationField& gt_bm,
                                              const std::vector<LineElement>& lines,
                                              double interval = 4.0, double eps = 1e-4,
                                              CurvatureMode mode = CurvatureMode::Absolute) {
    if (pred_bm.height != gt_bm.height || pred_bm.width != gt_bm.width)
        throw invalid_argument("line_supervision: field dims must match");
    LineSupervisionResult res;
    double nx = gt_bm.width - 1.0, ny = gt_bm.height - 1.0;
    double acc = 0.0;
    for (const LineElement& line : lines) {
        ControlPointSet cps;
        try {
            cps = sample_line(line, interval);
        } catch (const line_too_short&) {
            ++res.lines_skipped;
            continue;
        }
        std::vector<Vec2> pred_px, gt_px;
        pred_px.reserve(cps.points.size());
        gt_px.reserve(cps.points.size());
        for (const Vec2& p : cps.points) {
            Vec2 u(p.x / nx, p.y / ny);
            Vec2 a = field_sample(pred_bm, u);
            Vec2 b = field_sample(gt_bm, u);
            pred_px.push_back(Vec2(a.x * nx, a.y * ny));
            gt_px.push_back(Vec2(b.x * nx, b.y * ny));
        }
        acc += curvature_loss(pred_px, gt_px, eps, mode);
        ++res.lines_used;
    }
    if (res.lines_used > 0) {
        res.loss = acc / res.lines_used;
        res.empty = false;
    }
    return res;
}

}  // namespace dewarp
