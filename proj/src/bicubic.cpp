#include "wmsr/bicubic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace wmsr {

namespace {

// Catmull-Rom kernel value at distances 1+t, t, 1-t, 2-t for t in [0,1).
void cubic_weights(double t, double w[4]) {
    auto near = [](double s) { return (1.5 * s - 2.5) * s * s + 1.0; };
    auto far = [](double s) { return ((-0.5 * s + 2.5) * s - 4.0) * s + 2.0; };
    w[0] = far(1.0 + t);
    w[1] = near(t);
    w[2] = near(1.0 - t);
    w[3] = far(2.0 - t);
}

struct AxisPlan {
    std::vector<int> tap;    // 4 clamped source indices per output index
    std::vector<double> wt;  // 4 weights per output index
};

AxisPlan plan_axis(int in, int out) {
    AxisPlan p;
    p.tap.resize(size_t(out) * 4);
    p.wt.resize(size_t(out) * 4);
    const double scale = double(in) / double(out);
    for (int j = 0; j < out; ++j) {
        const double src = (j + 0.5) * scale - 0.5;
        const double base = std::floor(src);
        cubic_weights(src - base, &p.wt[size_t(j) * 4]);
        for (int q = 0; q < 4; ++q)
            p.tap[size_t(j) * 4 + q] =
                std::clamp(int(base) - 1 + q, 0, in - 1);
    }
    return p;
}

}  // namespace

Grid bicubic_resize(const Grid& x, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1,
            "bicubic_resize: non-positive output size " +
                std::to_string(out_h) + "x" + std::to_string(out_w));
    require(x.shape.h >= 1 && x.shape.w >= 1,
            "bicubic_resize: empty input " + x.shape.str());
    const int B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;

    // Horizontal pass, then vertical.
    const AxisPlan pw = plan_axis(W, out_w);
    Grid mid(Shape(B, C, H, out_w));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h) {
                const double* row = x.data() + x.idx(b, c, h, 0);
                double* dst = mid.data() + mid.idx(b, c, h, 0);
                for (int j = 0; j < out_w; ++j) {
                    const int* tp = &pw.tap[size_t(j) * 4];
                    const double* wt = &pw.wt[size_t(j) * 4];
                    dst[j] = wt[0] * row[tp[0]] + wt[1] * row[tp[1]] +
                             wt[2] * row[tp[2]] + wt[3] * row[tp[3]];
                }
            }

    const AxisPlan ph = plan_axis(H, out_h);
    Grid out(Shape(B, C, out_h, out_w));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < out_h; ++i) {
                const int* tp = &ph.tap[size_t(i) * 4];
                const double* wt = &ph.wt[size_t(i) * 4];
                const double* r0 = mid.data() + mid.idx(b, c, tp[0], 0);
                const double* r1 = mid.data() + mid.idx(b, c, tp[1], 0);
                const double* r2 = mid.data() + mid.idx(b, c, tp[2], 0);
                const double* r3 = mid.data() + mid.idx(b, c, tp[3], 0);
                double* dst = out.data() + out.idx(b, c, i, 0);
                for (int j = 0; j < out_w; ++j)
                    dst[j] = wt[0] * r0[j] + wt[1] * r1[j] + wt[2] * r2[j] +
                             wt[3] * r3[j];
            }
    return out;
}

}  // namespace wmsr
