#include "wmsr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace wmsr {

namespace {

struct Stop {
    double v;
    double r, g, b;
};

// Dark blue -> blue -> teal -> orange -> dark red.
constexpr Stop kStops[] = {
    {0.00, 8, 29, 88},    {0.25, 33, 113, 181}, {0.50, 102, 194, 164},
    {0.75, 250, 177, 101}, {1.00, 165, 15, 21},
};

unsigned char quant(double x) {
    return (unsigned char)(std::lround(std::min(255.0, std::max(0.0, x))));
}

}  // namespace

std::array<unsigned char, 3> heat_rgb(double v) {
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
            "heat_rgb: value outside [0,1]");
    int k = 0;
    while (k + 2 < int(std::size(kStops)) && v > kStops[k + 1].v) ++k;
    const Stop& a = kStops[k];
    const Stop& b = kStops[k + 1];
    const double t = (v - a.v) / (b.v - a.v);
    return {quant(a.r + t * (b.r - a.r)), quant(a.g + t * (b.g - a.g)),
            quant(a.b + t * (b.b - a.b))};
}

std::string render_ppm(const Grid& g) {
    require(g.shape.b == 1 && g.shape.c == 1,
            "render_ppm: expected a (1,1,H,W) grid, got " + g.shape.str());
    require(g.shape.h > 0 && g.shape.w > 0, "render_ppm: empty grid");
    std::string out = "P6\n" + std::to_string(g.shape.w) + " " +
                      std::to_string(g.shape.h) + "\n255\n";
    out.reserve(out.size() + size_t(g.numel()) * 3);
    for (double v : g.v) {
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                "render_ppm: value outside [0,1]");
        const auto rgb = heat_rgb(v);
        out.push_back(char(rgb[0]));
        out.push_back(char(rgb[1]));
        out.push_back(char(rgb[2]));
    }
    return out;
}

void write_ppm(const std::string& path, const Grid& g) {
    const std::string bytes = render_ppm(g);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "write_ppm: cannot open " + path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    require(out.good(), "write_ppm: write failed for " + path);
}

Grid abs_error_map(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "abs_error_map");
    Grid e(a.shape);
    for (size_t i = 0; i < e.v.size(); ++i)
        e.v[i] = std::min(1.0, 4.0 * std::abs(a.v[i] - b.v[i]));
    return e;
}

}  // namespace wmsr
