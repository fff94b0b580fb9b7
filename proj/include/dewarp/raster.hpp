#pragma once

#include <cstddef>
#include <vector>

#include "dewarp/common.hpp"

namespace dewarp {

// H x W x C grid of doubles, row-major, channel-interleaved.
// Image and mask payloads keep values in [0,1]; logits rasters are unbounded.
struct Raster {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> data;

    Raster() = default;

    Raster(int h, int w, int c, double fill = 0.0) : height(h), width(w), channels(c) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw invalid_argument("Raster: dimensions must be positive");
        data.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    static Raster zeros(int h, int w, int c = 1) { return Raster(h, w, c, 0.0); }
    static Raster constant(int h, int w, int c, double v) { return Raster(h, w, c, v); }

    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }

    double& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }

    bool same_shape(const Raster& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }

    // Rec.601 luma for 3-channel input; pass-through copy for 1-channel.
    Raster luma() const {
        if (channels == 1) return *this;
        if (channels != 3)
            throw invalid_argument("Raster::luma: expected 1 or 3 channels");
        Raster out(height, width, 1);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(y, x) = 0.299 * at(y, x, 0) + 0.587 * at(y, x, 1) + 0.114 * at(y, x, 2);
        return out;
    }

    void validate_image(const char* what) const {
        for (double v : data) {
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw invalid_argument(std::string(what) + ": values must be finite and in [0,1]");
        }
    }
};

// Integer-aligned drawing helpers shared by the document renderer and the
// plot writer. Pixel (r,c) has its center at continuous coordinate (c, r).

// Fills [x0,x1) x [y0,y1); returns the count of pixels newly raised in ink_mask.
inline long fill_rect(Raster& img, Raster* ink_mask, int x0, int y0, int x1, int y1,
                      double value) {
    long fresh = 0;
    x0 = clamp_int(x0, 0, img.width);
    x1 = clamp_int(x1, 0, img.width);
    y0 = clamp_int(y0, 0, img.height);
    y1 = clamp_int(y1, 0, img.height);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = value;
            if (ink_mask) {
                if (ink_mask->at(y, x) == 0.0) ++fresh;
                ink_mask->at(y, x) = 1.0;
            }
        }
    }
    return fresh;
}

inline long fill_disk(Raster& img, Raster* ink_mask, double cx, double cy, double radius,
                      double value) {
    long fresh = 0;
    int x0 = clamp_int(static_cast<int>(std::floor(cx - radius)) - 1, 0, img.width - 1);
    int x1 = clamp_int(static_cast<int>(std::ceil(cx + radius)) + 1, 0, img.width - 1);
    int y0 = clamp_int(static_cast<int>(std::floor(cy - radius)) - 1, 0, img.height - 1);
    int y1 = clamp_int(static_cast<int>(std::ceil(cy + radius)) + 1, 0, img.height - 1);
    double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (sqr(x - cx) + sqr(y - cy) > r2) continue;
            for (int c = 0; c < img.channels; ++c) img.at(y, x, c) = value;
            if (ink_mask) {
                if (ink_mask->at(y, x) == 0.0) ++fresh;
                ink_mask->at(y, x) = 1.0;
            }
        }
    }
    return fresh;
}

// 1-px Bresenham stroke, used by the plot writer.
inline void draw_segment(Raster& img, int x0, int y0, int x1, int y1,
                         double r, double g, double b) {
    int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height) {
            if (img.channels == 3) {
                img.at(y0, x0, 0) = r;
                img.at(y0, x0, 1) = g;
                img.at(y0, x0, 2) = b;
            } else {
                img.at(y0, x0, 0) = r;
            }
        }
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) { err += dy; x0 += sx; }
        if (e2 <= dx) { err += dx; y0 += sy; }
    }
}

}  // namespace dewarp
