#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dewarp/common.hpp"

namespace dewarp {

// Backward: grid over the distorted raster, values are source coords in the
// flat document.  Forward: grid over the flat document, values are coords in
// the distorted raster.  Coordinates are normalized so that (0,0) is the
// center of the top-left pixel and (1,1) the center of the bottom-right one.
enum class Direction : std::uint8_t { Backward = 0, Forward = 1 };

struct DeformationField {
    int height = 0;
    int width = 0;
    Direction direction = Direction::Backward;
    std::vector<Vec2> coords;  // row-major

    DeformationField() = default;

    DeformationField(int h, int w, Direction dir) : height(h), width(w), direction(dir) {
        if (h < 2 || w < 2)
            throw invalid_argument("DeformationField: dims must be at least 2x2");
        coords.assign(static_cast<std::size_t>(h) * w, Vec2{});
    }

    Vec2& at(int i, int j) { return coords[static_cast<std::size_t>(i) * width + j]; }
    const Vec2& at(int i, int j) const { return coords[static_cast<std::size_t>(i) * width + j]; }

    static DeformationField identity(int h, int w, Direction dir = Direction::Backward) {
        DeformationField f(h, w, dir);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                f.at(i, j) = Vec2(j / (w - 1.0), i / (h - 1.0));
        return f;
    }

    // Largest coordinate change between 4-adjacent cells; the generator keeps
    // this below 4/min(H,W).
    double max_adjacent_jump() const {
        double m = 0.0;
        for (int i = 0; i < height; ++i) {
            for (int j = 0; j < width; ++j) {
                if (j + 1 < width) m = std::max(m, (at(i, j + 1) - at(i, j)).norm());
                if (i + 1 < height) m = std::max(m, (at(i + 1, j) - at(i, j)).norm());
            }
        }
        return m;
    }

    void validate_values(const char* what) const {
        for (const Vec2& v : coords) {
            if (!std::isfinite(v.x) || !std::isfinite(v.y) ||
                v.x < -0.25 || v.x > 1.25 || v.y < -0.25 || v.y > 1.25)
                throw invalid_argument(std::string(what) +
                                       ": field values must be finite and in [-0.25, 1.25]");
        }
    }
};

// DFLD container, version 1:
//   bytes 0-3   magic "DFLD"
//   byte  4     version (1)
//   byte  5     direction (0 backward, 1 forward)
//   bytes 6-9   height, u32 little-endian
//   bytes 10-13 width, u32 little-endian
//   then H*W*2 little-endian f32, row-major, x before y.
namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32le(std::string& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32le(out, v);
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32le(const unsigned char* p) {
    std::uint32_t v = get_u32le(p);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace detail

inline std::string encode_dfld(const DeformationField& f) {
    std::string out;
    out.reserve(14 + static_cast<std::size_t>(f.height) * f.width * 8);
    out += "DFLD";
    out.push_back(1);
    out.push_back(static_cast<char>(f.direction));
    detail::put_u32le(out, static_cast<std::uint32_t>(f.height));
    detail::put_u32le(out, static_cast<std::uint32_t>(f.width));
    for (const Vec2& v : f.coords) {
        detail::put_f32le(out, static_cast<float>(v.x));
        detail::put_f32le(out, static_cast<float>(v.y));
    }
    return out;
}

inline void save_field(const std::string& path, const DeformationField& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("save_field: cannot open " + path);
    std::string bytes = encode_dfld(f);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("save_field: write failed for " + path);
}

inline DeformationField decode_dfld(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 14 || bytes.compare(0, 4, "DFLD") != 0)
        throw data_error("decode_dfld: bad magic in " + origin);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (p[4] != 1) throw data_error("decode_dfld: unsupported version in " + origin);
    if (p[5] > 1) throw data_error("decode_dfld: bad direction byte in " + origin);
    std::uint32_t h = detail::get_u32le(p + 6);
    std::uint32_t w = detail::get_u32le(p + 10);
    if (h < 2 || w < 2 || h > 1u << 20 || w > 1u << 20)
        throw data_error("decode_dfld: implausible dims in " + origin);
    std::size_t need = 14 + static_cast<std::size_t>(h) * w * 8;
    if (bytes.size() != need)
        throw data_error("decode_dfld: truncated payload in " + origin);
    DeformationField f(static_cast<int>(h), static_cast<int>(w),
                       static_cast<Direction>(p[5]));
    const unsigned char* q = p + 14;
    for (Vec2& v : f.coords) {
        v.x = detail::get_f32le(q);
        v.y = detail::get_f32le(q + 4);
        q += 8;
        if (!std::isfinite(v.x) || !std::isfinite(v.y))
            throw data_error("decode_dfld: non-finite value in " + origin);
    }
    return f;
}

inline DeformationField load_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("load_field: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_dfld(bytes, path);
}

}  // namespace dewarp
