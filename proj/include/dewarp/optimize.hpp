#pragma once

#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/objective.hpp"

namespace dewarp {

struct DemoOptions {
    int iterations = 500;
    double initial_step = 0.5;
    double step_growth = 1.3;  // accepted-step regrowth factor, 1 = halving only
    double curvature_weight = 0.1;  // weight of the line term; 0 disables it
    double interval = 4.0;
    double eps = 1e-4;
    double kink_delta = 0.0;    // Huber width smoothing the line term's kinks;
                                // 0 keeps the exact subgradient, zero at kinks
    double line_cap = 0.02;     // line-gradient max-norm cap, relative to the map term's
    double line_phase = 0.005;  // line direction engages once map_term falls below
                                // this fraction of its initial value
    int coarse = 36;
    CurvatureMode mode = CurvatureMode::Absolute;
};

struct DemoIterRow {
    int iteration = 0;
    double total = 0.0;
    double map_term = 0.0;
    double line_term = 0.0;
};

struct DemoResult {
    DeformationField field;
    std::vector<DemoIterRow> rows;  // loss after each accepted iteration
    double map_initial = 0.0;
    double map_final = 0.0;
    double line_initial = 0.0;
    double line_final = 0.0;
    double mean_point_offset_px = 0.0;  // mean control-point error vs the target
    int iterations_run = 0;
    bool converged = false;  // step collapsed before the iteration budget
};

namespace detail {

// Bilinear gather stencil of a field lookup: 4 node indices + weights.
struct FieldStencil {
    int idx[4];
    double w[4];
};

inline FieldStencil field_stencil(int height, int width, const Vec2& u) {
    double px = clamp(u.x, 0.0, 1.0) * (width - 1);
    double py = clamp(u.y, 0.0, 1.0) * (height - 1);
    int x0 = std::min(static_cast<int>(px), width - 2);
    int y0 = std::min(static_cast<int>(py), height - 2);
    double fx = px - x0, fy = py - y0;
    FieldStencil s;
    s.idx[0] = y0 * width + x0;
    s.idx[1] = y0 * width + x0 + 1;
    s.idx[2] = (y0 + 1) * width + x0;
    s.idx[3] = (y0 + 1) * width + x0 + 1;
    s.w[0] = (1 - fx) * (1 - fy);
    s.w[1] = fx * (1 - fy);
    s.w[2] = (1 - fx) * fy;
    s.w[3] = fx * fy;
    return s;
}

}  // namespace detail

// Guarded subgradient descent: a free coarse displacement grid, bilinearly
// upsampled onto the target's resolution, fitted to the target field with the
// mean-absolute map term plus the weighted curvature line term. Steps that do
// not improve the loss halve the step size; improving steps grow it.
class FieldFitDemo {
public:
    FieldFitDemo(const DeformationField& target, const std::vector<LineElement>& lines,
                 const DemoOptions& opts)
        : target_(target), opts_(opts) {
        if (target.direction != Direction::Backward)
            throw invalid_argument("FieldFitDemo: target must be a backward field");
        if (opts.coarse < 2 || opts.coarse > target.height || opts.coarse > target.width)
            throw invalid_argument("FieldFitDemo: bad coarse grid size");
        if (opts.iterations < 1)
            throw invalid_argument("FieldFitDemo: iterations must be positive");
        h_ = target.height;
        w_ = target.width;
        c_ = opts.coarse;
        coarse_.assign(static_cast<std::size_t>(c_) * c_ * 2, 0.0);
        identity_ = DeformationField::identity(h_, w_);

        // Fixed upsample stencils fine -> coarse (align-corners bilinear).
        up_.resize(static_cast<std::size_t>(h_) * w_);
        double sy = (c_ - 1.0) / (h_ - 1.0), sx = (c_ - 1.0) / (w_ - 1.0);
        for (int i = 0; i < h_; ++i) {
            double py = i * sy;
            int y0 = std::min(static_cast<int>(py), c_ - 2);
            double fy = py - y0;
            for (int j = 0; j < w_; ++j) {
                double px = j * sx;
                int x0 = std::min(static_cast<int>(px), c_ - 2);
                double fx = px - x0;
                detail::FieldStencil& s = up_[static_cast<std::size_t>(i) * w_ + j];
                s.idx[0] = y0 * c_ + x0;
                s.idx[1] = y0 * c_ + x0 + 1;
                s.idx[2] = (y0 + 1) * c_ + x0;
                s.idx[3] = (y0 + 1) * c_ + x0 + 1;
                s.w[0] = (1 - fx) * (1 - fy);
                s.w[1] = fx * (1 - fy);
                s.w[2] = (1 - fx) * fy;
                s.w[3] = fx * fy;
            }
        }

        // Control points: fixed sampling positions, target positions, and the
        // gather stencils into the fine field.
        double nx = w_ - 1.0, ny = h_ - 1.0;
        for (const LineElement& line : lines) {
            ControlPointSet cps;
            try {
                cps = sample_line(line, opts_.interval);
            } catch (const line_too_short&) {
                continue;
            }
            LineData ld;
            for (const Vec2& p : cps.points) {
                Vec2 u(p.x / nx, p.y / ny);
                ld.stencils.push_back(detail::field_stencil(h_, w_, u));
                Vec2 t = field_sample(target_, u);
                ld.target_px.push_back(Vec2(t.x * nx, t.y * ny));
            }
            if (ld.target_px.size() >= 3) lines_.push_back(std::move(ld));
        }

        // Coarse nodes whose motion moves some line control point. Zeroing a
        // direction there leaves every gathered point, and hence the line
        // term's value, exactly unchanged.
        line_adjacent_.assign(static_cast<std::size_t>(c_) * c_, false);
        for (const LineData& ld : lines_)
            for (const detail::FieldStencil& s : ld.stencils)
                for (int k = 0; k < 4; ++k) {
                    const detail::FieldStencil& u = up_[s.idx[k]];
                    for (int j = 0; j < 4; ++j) line_adjacent_[u.idx[j]] = true;
                }
    }

    // Initializes the coarse grid from an existing fine field's displacements
    // (sampled at the coarse nodes).
    void init_from(const DeformationField& f) {
        if (f.height != h_ || f.width != w_)
            throw invalid_argument("FieldFitDemo: init field dims mismatch");
        for (int ci = 0; ci < c_; ++ci) {
            int fi = static_cast<int>(std::lround(ci * (h_ - 1.0) / (c_ - 1.0)));
            for (int cj = 0; cj < c_; ++cj) {
                int fj = static_cast<int>(std::lround(cj * (w_ - 1.0) / (c_ - 1.0)));
                std::size_t k = (static_cast<std::size_t>(ci) * c_ + cj) * 2;
                coarse_[k] = f.at(fi, fj).x - identity_.at(fi, fj).x;
                coarse_[k + 1] = f.at(fi, fj).y - identity_.at(fi, fj).y;
            }
        }
    }

    int usable_lines() const { return static_cast<int>(lines_.size()); }

    // Guarded descent in two phases. While the map term is above line_phase
    // of its initial value the line term is tracked but inert: steps are
    // guarded on the map term alone, and only the map direction and its
    // masked variant run. Engaging the line term earlier fails two ways: its
    // transient rises along the dense-fit path would veto map steps at every
    // scale at once (both terms are piecewise linear, so halving cannot save
    // a step), and its direction digs gauge-free valleys, matching curvatures
    // through the wrong field while the points are still far from target.
    // Once the map term is small the line direction joins, tried first so the
    // always-accepting map direction cannot starve it. From then on every
    // step must also keep the mean control-point offset from rising, and line
    // steps must lower the total: the curvature term compares h^2-amplified
    // second differences, so near the optimum it could otherwise trade real
    // point accuracy for sub-resolution smoothness. Each direction keeps its
    // own adaptive step, halved on rejection and regrown on acceptance.
    DemoResult run() {
        DemoResult res;
        std::vector<double> gmap(coarse_.size()), gline(coarse_.size());
        std::vector<double> dir(coarse_.size());
        std::vector<double> trial(coarse_.size());
        double map_term = 0.0, line_term = 0.0, ctrl_cur = 0.0;
        double loss = eval(coarse_, &map_term, &line_term, &ctrl_cur);
        res.map_initial = map_term;
        res.line_initial = line_term;
        bool with_line = opts_.curvature_weight > 0.0 && !lines_.empty();
        double steps[3] = {opts_.initial_step, opts_.initial_step, opts_.initial_step};
        bool engaged = false;
        for (int it = 0; it < opts_.iterations; ++it) {
            engaged = engaged || !with_line ||
                      map_term <= opts_.line_phase * std::max(res.map_initial, 1e-300);
            // Once engaged the line direction goes first: its guards are the
            // strictest, so trying it only when the others fail would starve
            // it entirely.
            const bool line_on = with_line && engaged;
            const int order[3] = {line_on ? 2 : 0, line_on ? 0 : 1, 1};
            const int ncand = !with_line ? 1 : (line_on ? 3 : 2);
            gradients(coarse_, gmap, gline);
            double gnorm = 0.0;
            for (std::size_t k = 0; k < coarse_.size(); ++k)
                gnorm = std::max(gnorm, std::abs(gmap[k]) + std::abs(gline[k]));
            if (gnorm == 0.0) {
                res.rows.push_back({it, loss, map_term, line_term});
                res.iterations_run = it + 1;
                res.converged = true;
                break;
            }
            bool accepted = false;
            double new_map = map_term, new_line = line_term, new_ctrl = ctrl_cur;
            for (int oi = 0; oi < ncand && !accepted; ++oi) {
                const int cand = order[oi];
                if (steps[cand] < 1e-14) continue;
                for (std::size_t k = 0; k < coarse_.size(); ++k) {
                    if (cand == 0)
                        dir[k] = gmap[k];
                    else if (cand == 1)
                        dir[k] = line_adjacent_[k / 2] ? 0.0 : gmap[k];
                    else
                        dir[k] = gline[k];
                }
                for (int half = 0; half < 3 && !accepted; ++half) {
                    for (std::size_t k = 0; k < coarse_.size(); ++k)
                        trial[k] = coarse_[k] - steps[cand] * dir[k];
                    double lt = eval(trial, &new_map, &new_line, &new_ctrl);
                    if (!std::isfinite(lt))
                        throw numerical_error("FieldFitDemo: loss became non-finite");
                    // Map directions are guarded on the map term alone: the
                    // line term's noise near the optimum would otherwise veto
                    // them at every scale at once and freeze the control-point
                    // region half-fitted. The line direction must additionally
                    // lower the total. Once the line term engages, every step
                    // must also keep the mean control-point offset from
                    // rising: the map guard covers whole coarse cells, so
                    // off-point gains could otherwise pay for dragging the
                    // points themselves.
                    bool ok = new_map <= map_term &&
                              (!engaged || new_ctrl <= ctrl_cur) &&
                              (cand != 2 || lt <= loss);
                    if (ok) {
                        coarse_.swap(trial);
                        loss = lt;
                        map_term = new_map;
                        line_term = new_line;
                        ctrl_cur = new_ctrl;
                        steps[cand] = std::min(steps[cand] * opts_.step_growth, 64.0);
                        for (int j = 0; j < 3; ++j) steps[j] = std::max(steps[j], steps[cand]);
                        accepted = true;
                    } else {
                        steps[cand] *= 0.5;
                    }
                }
            }
            res.rows.push_back({it, loss, map_term, line_term});
            res.iterations_run = it + 1;
            if (!accepted) {
                bool exhausted = true;
                for (int oi = 0; oi < ncand; ++oi)
                    if (steps[order[oi]] >= 1e-14) exhausted = false;
                if (exhausted) {
                    res.converged = true;
                    break;
                }
            }
        }
        res.map_final = map_term;
        res.line_final = line_term;
        res.field = upsample(coarse_);
        res.mean_point_offset_px = mean_point_offset(res.field);
        return res;
    }

    DeformationField upsample(const std::vector<double>& coarse) const {
        DeformationField f = identity_;
        for (std::size_t p = 0; p < up_.size(); ++p) {
            const detail::FieldStencil& s = up_[p];
            double dx = 0.0, dy = 0.0;
            for (int k = 0; k < 4; ++k) {
                dx += s.w[k] * coarse[static_cast<std::size_t>(s.idx[k]) * 2];
                dy += s.w[k] * coarse[static_cast<std::size_t>(s.idx[k]) * 2 + 1];
            }
            f.coords[p].x += dx;
            f.coords[p].y += dy;
        }
        return f;
    }

    double mean_point_offset(const DeformationField& f) const {
        double nx = w_ - 1.0, ny = h_ - 1.0;
        double acc = 0.0;
        long n = 0;
        for (const LineData& ld : lines_) {
            for (std::size_t i = 0; i < ld.stencils.size(); ++i) {
                Vec2 pred = gather(f, ld.stencils[i]);
                acc += std::sqrt(sqr(pred.x * nx - ld.target_px[i].x) +
                                 sqr(pred.y * ny - ld.target_px[i].y));
                ++n;
            }
        }
        return n > 0 ? acc / n : 0.0;
    }

private:
    struct LineData {
        std::vector<detail::FieldStencil> stencils;
        std::vector<Vec2> target_px;
    };

    Vec2 gather(const DeformationField& f, const detail::FieldStencil& s) const {
        Vec2 v;
        for (int k = 0; k < 4; ++k) {
            v.x += s.w[k] * f.coords[s.idx[k]].x;
            v.y += s.w[k] * f.coords[s.idx[k]].y;
        }
        return v;
    }

    // ctrl_off, when requested, receives the mean pixel distance between the
    // upsampled control points and their targets; the line direction's guard
    // uses it to forbid steps that back control points away from the target.
    double eval(const std::vector<double>& coarse, double* map_term, double* line_term,
                double* ctrl_off = nullptr) const {
        DeformationField f = upsample(coarse);
        double map_acc = 0.0;
        for (std::size_t i = 0; i < f.coords.size(); ++i) {
            map_acc += std::abs(f.coords[i].x - target_.coords[i].x) +
                       std::abs(f.coords[i].y - target_.coords[i].y);
        }
        *map_term = map_acc / (2.0 * f.coords.size());
        double line_acc = 0.0, off_acc = 0.0;
        std::size_t npts = 0;
        if (opts_.curvature_weight > 0.0 && !lines_.empty()) {
            double nx = w_ - 1.0, ny = h_ - 1.0;
            for (const LineData& ld : lines_) {
                std::vector<Vec2> pred;
                pred.reserve(ld.stencils.size());
                for (const detail::FieldStencil& s : ld.stencils) {
                    Vec2 v = gather(f, s);
                    pred.push_back(Vec2(v.x * nx, v.y * ny));
                }
                if (ctrl_off)
                    for (std::size_t i = 0; i < pred.size(); ++i)
                        off_acc += std::hypot(pred[i].x - ld.target_px[i].x,
                                              pred[i].y - ld.target_px[i].y);
                npts += pred.size();
                line_acc += curvature_loss(pred, ld.target_px, opts_.eps, opts_.mode,
                                           opts_.kink_delta);
            }
            line_acc /= lines_.size();
        }
        *line_term = line_acc;
        if (ctrl_off) *ctrl_off = npts ? off_acc / npts : 0.0;
        return *map_term + opts_.curvature_weight * line_acc;
    }

    void scatter_to_coarse(const std::vector<Vec2>& fine, std::vector<double>& out) const {
        for (std::size_t p = 0; p < up_.size(); ++p) {
            const detail::FieldStencil& s = up_[p];
            for (int k = 0; k < 4; ++k) {
                out[static_cast<std::size_t>(s.idx[k]) * 2] += s.w[k] * fine[p].x;
                out[static_cast<std::size_t>(s.idx[k]) * 2 + 1] += s.w[k] * fine[p].y;
            }
        }
    }

    // The two terms live at wildly different scales: the map subgradient is a
    // uniform +-1/(2N) per fine node with a long linear range, while the line
    // term's pixel-space chain rule yields forces ~1000x larger whose sign
    // flips after micrometer-scale node moves. The line gradient is therefore
    // rescaled so its max-norm stays within line_cap of the map gradient's.
    void gradients(const std::vector<double>& coarse, std::vector<double>& gmap,
                   std::vector<double>& gline) const {
        DeformationField f = upsample(coarse);
        std::vector<Vec2> fine(f.coords.size(), Vec2{});
        double inv_map = 1.0 / (2.0 * f.coords.size());
        for (std::size_t i = 0; i < f.coords.size(); ++i) {
            double dx = f.coords[i].x - target_.coords[i].x;
            double dy = f.coords[i].y - target_.coords[i].y;
            fine[i].x = (dx > 0.0 ? 1.0 : (dx < 0.0 ? -1.0 : 0.0)) * inv_map;
            fine[i].y = (dy > 0.0 ? 1.0 : (dy < 0.0 ? -1.0 : 0.0)) * inv_map;
        }
        std::fill(gmap.begin(), gmap.end(), 0.0);
        scatter_to_coarse(fine, gmap);
        std::fill(gline.begin(), gline.end(), 0.0);
        if (opts_.curvature_weight > 0.0 && !lines_.empty()) {
            double nx = w_ - 1.0, ny = h_ - 1.0;
            double wl = opts_.curvature_weight / lines_.size();
            std::fill(fine.begin(), fine.end(), Vec2{});
            for (const LineData& ld : lines_) {
                std::vector<Vec2> pred;
                pred.reserve(ld.stencils.size());
                for (const detail::FieldStencil& s : ld.stencils) {
                    Vec2 v = gather(f, s);
                    pred.push_back(Vec2(v.x * nx, v.y * ny));
                }
                std::vector<Vec2> g = curvature_loss_grad(pred, ld.target_px, opts_.eps,
                                                          opts_.mode, opts_.kink_delta);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const detail::FieldStencil& s = ld.stencils[i];
                    double gx = wl * g[i].x * nx;
                    double gy = wl * g[i].y * ny;
                    for (int k = 0; k < 4; ++k) {
                        fine[s.idx[k]].x += s.w[k] * gx;
                        fine[s.idx[k]].y += s.w[k] * gy;
                    }
                }
            }
            scatter_to_coarse(fine, gline);
            double nm = 0.0, nl = 0.0;
            for (std::size_t i = 0; i < gmap.size(); ++i) {
                nm = std::max(nm, std::abs(gmap[i]));
                nl = std::max(nl, std::abs(gline[i]));
            }
            double cap = opts_.line_cap * nm;
            if (nl > cap && nl > 0.0) {
                double scale = cap / nl;
                for (std::size_t i = 0; i < gline.size(); ++i) gline[i] *= scale;
            }
        }
    }

    DeformationField target_;
    DemoOptions opts_;
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> coarse_;  // per-node displacement, xy interleaved
    DeformationField identity_;
    std::vector<detail::FieldStencil> up_;
    std::vector<LineData> lines_;
    std::vector<bool> line_adjacent_;  // coarse nodes feeding some control point
};

inline DemoResult optimize_field_demo(const DeformationField& target,
                                      const std::vector<LineElement>& lines,
                                      const DemoOptions& opts = {}) {
    FieldFitDemo demo(target, lines, opts);
    return demo.run();
}

}  // namespace dewarp
