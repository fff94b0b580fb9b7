#pragma once

#include <string>
#include <vector>

#include "dewarp/field.hpp"
#include "dewarp/raster.hpp"
#include "dewarp/warp.hpp"

namespace dewarp {

namespace detail {

inline std::vector<double> gaussian_kernel_11() {
    std::vector<double> k(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable 11-tap blur, valid region only (output dims shrink by 10).
inline Raster gauss_valid(const Raster& src) {
    static const std::vector<double> k = gaussian_kernel_11();
    Raster tmp(src.height, src.width - 10, 1);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < tmp.width; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 11; ++i) acc += k[i] * src.at(y, x + i);
            tmp.at(y, x) = acc;
        }
    Raster out(src.height - 10, tmp.width, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 11; ++i) acc += k[i] * tmp.at(y + i, x);
            out.at(y, x) = acc;
        }
    return out;
}

inline Raster downsample2(const Raster& src) {
    Raster out(src.height / 2, src.width / 2, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(y, x) = 0.25 * (src.at(2 * y, 2 * x) + src.at(2 * y, 2 * x + 1) +
                                   src.at(2 * y + 1, 2 * x) + src.at(2 * y + 1, 2 * x + 1));
    return out;
}

struct SsimMoments {
    double luminance_mean = 0.0;
    double contrast_mean = 0.0;
    double combined_mean = 0.0;
};

inline SsimMoments ssim_moments(const Raster& a, const Raster& b) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Raster mu_a = gauss_valid(a), mu_b = gauss_valid(b);
    Raster a2(a.height, a.width, 1), b2(a.height, a.width, 1), ab(a.height, a.width, 1);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        a2.data[i] = a.data[i] * a.data[i];
        b2.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    Raster e_a2 = gauss_valid(a2), e_b2 = gauss_valid(b2), e_ab = gauss_valid(ab);
    SsimMoments m;
    std::size_t n = mu_a.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        double ma = mu_a.data[i], mb = mu_b.data[i];
        double va = e_a2.data[i] - ma * ma;
        double vb = e_b2.data[i] - mb * mb;
        double cov = e_ab.data[i] - ma * mb;
        double lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        double con = (2.0 * cov + c2) / (va + vb + c2);
        m.luminance_mean += lum;
        m.contrast_mean += con;
        m.combined_mean += lum * con;
    }
    m.luminance_mean /= n;
    m.contrast_mean /= n;
    m.combined_mean /= n;
    return m;
}

}  // namespace detail

// Multi-scale SSIM, product-of-exponents form: contrast terms at the coarse
// levels, full SSIM at the last. Standard 5-level weights, renormalized when
// fewer levels are requested; levels=1 reduces to plain SSIM.
inline double ms_ssim(const Raster& a, const Raster& b, int levels = 5) {
    if (!a.same_shape(b)) throw invalid_argument("ms_ssim: shapes must match");
    if (levels < 1 || levels > 5) throw invalid_argument("ms_ssim: levels must be in [1,5]");
    int min_side = 11 << (levels - 1);
    if (a.height < min_side || a.width < min_side)
        throw invalid_argument("ms_ssim: image too small for the level count");
    a.validate_image("ms_ssim: first image");
    b.validate_image("ms_ssim: second image");

    static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::vector<double> w(kWeights, kWeights + levels);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    for (double& v : w) v /= wsum;

    Raster ga = a.luma(), gb = b.luma();
    double result = 1.0;
    for (int level = 0; level < levels; ++level) {
        detail::SsimMoments m = detail::ssim_moments(ga, gb);
        double term = level == levels - 1 ? m.combined_mean : m.contrast_mean;
        result *= std::pow(std::max(term, 0.0), w[level]);
        if (level + 1 < levels) {
            ga = detail::downsample2(ga);
            gb = detail::downsample2(gb);
        }
    }
    return result;
}

// Mean per-cell offset magnitude between two backward fields, in pixels of
// the field grid.
inline double local_distortion(const DeformationField& pred, const DeformationField& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw invalid_argument("local_distortion: field dims must match");
    if (pred.direction != gt.direction)
        throw invalid_argument("local_distortion: field directions must match");
    double sx = pred.width - 1.0, sy = pred.height - 1.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.coords.size(); ++i) {
        double dx = (pred.coords[i].x - gt.coords[i].x) * sx;
        double dy = (pred.coords[i].y - gt.coords[i].y) * sy;
        acc += std::sqrt(dx * dx + dy * dy);
    }
    return acc / static_cast<double>(pred.coords.size());
}

struct AlignedDistortionResult {
    double value = 0.0;        // normalized residual
    double residual = 0.0;     // mean absolute intensity difference at the optimum
    double best_scale = 1.0;
    Vec2 best_shift;           // px, applied before scaling
};

// Best mean absolute difference under a translate-then-scale grid search
// (integer shifts in [-16,16]^2, scales 0.90..1.10 step 0.01, about the image
// center), normalized by the reference's mean gradient magnitude. Candidates
// covering less than half the frame are skipped.
inline AlignedDistortionResult aligned_distortion_full(const Raster& ref_in,
                                                       const Raster& img_in) {
    if (!ref_in.same_shape(img_in))
        throw invalid_argument("aligned_distortion: shapes must match");
    if (ref_in.height < 48 || ref_in.width < 48)
        throw invalid_argument("aligned_distortion: image too small");
    ref_in.validate_image("aligned_distortion: reference");
    img_in.validate_image("aligned_distortion: candidate");
    Raster ref = ref_in.luma(), img = img_in.luma();
    int h = ref.height, w = ref.width;
    double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

    const int shift_range = 16;
    double best_err = std::numeric_limits<double>::infinity();
    double best_scale = 1.0;
    int best_tx = 0, best_ty = 0;
    std::vector<double> resampled(static_cast<std::size_t>(h) * w);
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(h) * w);
    long min_cover = static_cast<long>(0.5 * h * w);

    for (int si = 0; si <= 20; ++si) {
        double s = 0.90 + 0.01 * si;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double px = s * (x - cx) + cx;
                double py = s * (y - cy) + cy;
                std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (px < 0.0 || px > w - 1.0 || py < 0.0 || py > h - 1.0) {
                    valid[i] = 0;
                    resampled[i] = 0.0;
                } else {
                    valid[i] = 1;
                    resampled[i] = bilinear_at(img, 0, px, py);
                }
            }
        }
        for (int ty = -shift_range; ty <= shift_range; ++ty) {
            for (int tx = -shift_range; tx <= shift_range; ++tx) {
                double acc = 0.0;
                long count = 0;
                int y_lo = std::max(0, -ty), y_hi = std::min(h, h - ty);
                int x_lo = std::max(0, -tx), x_hi = std::min(w, w - tx);
                for (int y = y_lo; y < y_hi; ++y) {
                    std::size_t row = static_cast<std::size_t>(y) * w;
                    std::size_t srow = static_cast<std::size_t>(y + ty) * w + tx;
                    for (int x = x_lo; x < x_hi; ++x) {
                        if (!valid[srow + x]) continue;
                        acc += std::abs(ref.data[row + x] - resampled[srow + x]);
                        ++count;
                    }
                }
                if (count < min_cover) continue;
                double err = acc / count;
                if (err < best_err) {
                    best_err = err;
                    best_scale = s;
                    best_tx = tx;
                    best_ty = ty;
                }
            }
        }
    }
    if (!std::isfinite(best_err))
        throw numerical_error("aligned_distortion: no candidate had enough coverage");

    double grad_acc = 0.0;
    long grad_n = 0;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            double gx = (ref.at(y - 1, x + 1) + 2.0 * ref.at(y, x + 1) + ref.at(y + 1, x + 1) -
                         ref.at(y - 1, x - 1) - 2.0 * ref.at(y, x - 1) - ref.at(y + 1, x - 1)) /
                        8.0;
            double gy = (ref.at(y + 1, x - 1) + 2.0 * ref.at(y + 1, x) + ref.at(y + 1, x + 1) -
                         ref.at(y - 1, x - 1) - 2.0 * ref.at(y - 1, x) - ref.at(y - 1, x + 1)) /
                        8.0;
            grad_acc += std::sqrt(gx * gx + gy * gy);
            ++grad_n;
        }
    }
    double mean_grad = grad_n > 0 ? grad_acc / grad_n : 0.0;
    AlignedDistortionResult r;
    r.residual = best_err;
    r.best_scale = best_scale;
    r.best_shift = Vec2(best_tx, best_ty);
    r.value = best_err / (mean_grad + 1e-12);
    return r;
}

inline double aligned_distortion(const Raster& ref, const Raster& img) {
    return aligned_distortion_full(ref, img).value;
}

// Levenshtein distance, unit costs.
inline long edit_distance(const std::string& a, const std::string& b) {
    std::size_t n = a.size(), m = b.size();
    std::vector<long> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<long>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

inline double cer(const std::string& prediction, const std::string& reference) {
    if (reference.empty())
        throw invalid_argument("cer: reference must be non-empty");
    return static_cast<double>(edit_distance(prediction, reference)) /
           static_cast<double>(reference.size());
}

}  // namespace dewarp
