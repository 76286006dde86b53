#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "wmsr/ops.hpp"
#include "wmsr/rng.hpp"
#include "wmsr/tape.hpp"

namespace testutil {

using wmsr::Grid;
using wmsr::ParamStore;
using wmsr::Shape;
using wmsr::Tape;

// Builds a scalar loss from tape + store; used both for backward and for
// finite-difference re-evaluation.
using LossFn = std::function<int(Tape&, ParamStore&)>;

inline double eval_loss(ParamStore& ps, const LossFn& build) {
    Tape t;
    return t.val(build(t, ps)).v[0];
}

struct GradcheckResult {
    double max_rel_err = 0.0;
    std::string worst;
};

// Central finite differences over every element of every parameter.
// abs_floor absorbs finite-difference evaluation noise, which grows with
// graph depth; deep end-to-end checks pass a larger h and floor.
inline GradcheckResult gradcheck(ParamStore& ps, const LossFn& build,
                                 double h = 1e-6, double abs_floor = 1e-8) {
    {
        Tape t;
        const int loss = build(t, ps);
        t.backward(loss);
        ps.zero_grad();
        t.accumulate_param_grads(ps);
    }
    GradcheckResult r;
    for (int pid = 0; pid < ps.size(); ++pid) {
        auto& e = ps[pid];
        for (size_t i = 0; i < e.value.v.size(); ++i) {
            const double save = e.value.v[i];
            e.value.v[i] = save + h;
            const double lp = eval_loss(ps, build);
            e.value.v[i] = save - h;
            const double lm = eval_loss(ps, build);
            e.value.v[i] = save;
            const double fd = (lp - lm) / (2.0 * h);
            const double g = e.grad.v[i];
            // |g - fd| below the finite-difference noise floor counts as exact
            if (std::abs(g - fd) < abs_floor) continue;
            const double rel =
                std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                r.worst = e.name + "[" + std::to_string(i) + "] grad " +
                          std::to_string(g) + " fd " + std::to_string(fd);
            }
        }
    }
    return r;
}

// Naive 7-loop convolution, the oracle for the im2col implementation.
inline Grid conv2d_naive(const Grid& x, const Grid& k, const Grid* bias,
                         int stride, int pad) {
    const int B = x.shape.b, inC = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int outC = k.shape.b, kh = k.shape.h, kw = k.shape.w;
    const int outH = (H + 2 * pad - kh) / stride + 1;
    const int outW = (W + 2 * pad - kw) / stride + 1;
    Grid out(Shape(B, outC, outH, outW));
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < outC; ++oc)
            for (int oh = 0; oh < outH; ++oh)
                for (int ow = 0; ow < outW; ++ow) {
                    double s = bias ? bias->v[size_t(oc)] : 0.0;
                    for (int ic = 0; ic < inC; ++ic)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int ih = oh * stride - pad + i;
                                const int iw = ow * stride - pad + j;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W)
                                    continue;
                                s += k.at(oc, ic, i, j) * x.at(b, ic, ih, iw);
                            }
                    out.at(b, oc, oh, ow) = s;
                }
    return out;
}

inline Grid random_grid(wmsr::Rng& rng, Shape s, double scale = 1.0) {
    Grid g(s);
    rng.fill_normal(g, 0.0, scale);
    return g;
}

}  // namespace testutil
