#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <png.h>

#include "dewarp/raster.hpp"

namespace dewarp {

// Reads an 8- or 16-bit PNG into [0,1] doubles. Palette/alpha inputs are
// normalized to gray or RGB.
inline Raster read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw data_error("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw data_error("read_png: libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<png_byte> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw data_error("read_png: failed to decode " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // libpng serves big-endian 16-bit
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    int out_channels = static_cast<int>(png_get_channels(png, info));
    depth = png_get_bit_depth(png, info);
    std::size_t rowbytes = png_get_rowbytes(png, info);
    buf.resize(rowbytes * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    if (out_channels != 1 && out_channels != 3)
        throw data_error("read_png: unsupported channel count in " + path);
    Raster r(static_cast<int>(h), static_cast<int>(w), out_channels);
    if (depth == 8) {
        for (png_uint_32 y = 0; y < h; ++y) {
            const png_byte* row = rows[y];
            for (std::size_t i = 0; i < w * static_cast<std::size_t>(out_channels); ++i)
                r.data[y * w * out_channels + i] = row[i] / 255.0;
        }
    } else if (depth == 16) {
        for (png_uint_32 y = 0; y < h; ++y) {
            const png_uint_16* row = reinterpret_cast<const png_uint_16*>(rows[y]);
            for (std::size_t i = 0; i < w * static_cast<std::size_t>(out_channels); ++i)
                r.data[y * w * out_channels + i] = row[i] / 65535.0;
        }
    } else {
        throw data_error("read_png: unsupported bit depth in " + path);
    }
    return r;
}

// Writes gray or RGB, 8-bit (default) or 16-bit. No ancillary chunks, so
// output bytes depend only on pixel content.
inline void write_png(const std::string& path, const Raster& img, int bit_depth = 8) {
    if (img.channels != 1 && img.channels != 3)
        throw invalid_argument("write_png: raster must have 1 or 3 channels");
    if (bit_depth != 8 && bit_depth != 16)
        throw invalid_argument("write_png: bit depth must be 8 or 16");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw data_error("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw data_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw data_error("write_png: failed to encode " + path);
    }
    png_init_io(png, fp);
    int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, bit_depth, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);

    std::size_t px = static_cast<std::size_t>(img.width) * img.channels;
    if (bit_depth == 8) {
        std::vector<png_byte> row(px);
        for (int y = 0; y < img.height; ++y) {
            for (std::size_t i = 0; i < px; ++i) {
                double v = clamp(img.data[y * px + i], 0.0, 1.0);
                row[i] = static_cast<png_byte>(std::lround(v * 255.0));
            }
            png_write_row(png, row.data());
        }
    } else {
        std::vector<png_uint_16> row(px);
        for (int y = 0; y < img.height; ++y) {
            for (std::size_t i = 0; i < px; ++i) {
                double v = clamp(img.data[y * px + i], 0.0, 1.0);
                row[i] = static_cast<png_uint_16>(std::lround(v * 65535.0));
            }
            png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
        }
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

}  // namespace dewarp
