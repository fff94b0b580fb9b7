#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dewarp {

// Error taxonomy. CLI maps invalid_argument-family to exit 2, data_error to 3,
// numerical_error to 4.
struct invalid_argument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct out_of_bounds : invalid_argument {
    using invalid_argument::invalid_argument;
};

struct line_too_short : invalid_argument {
    using invalid_argument::invalid_argument;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }

    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
    double norm2() const { return x * x + y * y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

// Deterministic PCG32 generator (O'Neill's pcg32). std <random> distributions
// are implementation-defined, which would break byte-identical outputs.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057B7EF767814Full) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ull + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // Unbiased integer in [0, bound).
    std::uint32_t below(std::uint32_t bound) {
        if (bound == 0) throw invalid_argument("Rng::below: bound must be positive");
        std::uint32_t threshold = (~bound + 1u) % bound;
        for (;;) {
            std::uint32_t r = next_u32();
            if (r >= threshold) return r % bound;
        }
    }

    // Uniform in [0, 1).
    double uniform() { return next_u32() * 0x1p-32; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; second value cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    bool chance(double p) { return uniform() < p; }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

inline double clamp(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

inline int clamp_int(int v, int lo, int hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

inline double sqr(double v) { return v * v; }

constexpr double kPi = 3.141592653589793238462643383279502884;

}  // namespace dewarp
