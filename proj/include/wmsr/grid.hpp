#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmsr {

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

inline void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// Dense rank-4 layout (batch, channel, height, width), row-major, width innermost.
struct Shape {
    int b = 0, c = 0, h = 0, w = 0;

    Shape() = default;
    Shape(int b_, int c_, int h_, int w_) : b(b_), c(c_), h(h_), w(w_) {}

    std::int64_t numel() const {
        return std::int64_t(b) * c * h * w;
    }
    bool operator==(const Shape& o) const {
        return b == o.b && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// The universal tensor: values are doubles, contiguous, width innermost.
struct Grid {
    Shape shape;
    std::vector<double> v;

    Grid() = default;
    explicit Grid(Shape s, double fill = 0.0) : shape(s), v(size_t(s.numel()), fill) {
        require(s.b >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
                "Grid: negative dimension in shape " + s.str());
    }
    Grid(Shape s, std::vector<double> data) : shape(s), v(std::move(data)) {
        require(std::int64_t(v.size()) == s.numel(),
                "Grid: data size " + std::to_string(v.size()) +
                " does not match shape " + s.str());
    }

    std::int64_t numel() const { return shape.numel(); }

    std::int64_t idx(int b, int c, int h, int w) const {
        return ((std::int64_t(b) * shape.c + c) * shape.h + h) * shape.w + w;
    }
    double& at(int b, int c, int h, int w) { return v[size_t(idx(b, c, h, w))]; }
    double at(int b, int c, int h, int w) const { return v[size_t(idx(b, c, h, w))]; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* op) {
    require(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                    a.shape.str() + " vs " + b.shape.str());
}

inline double max_abs_diff(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(a.v[i] - b.v[i]));
    return m;
}

}  // namespace wmsr
