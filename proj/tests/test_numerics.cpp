#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "wmsr/bicubic.hpp"
#include "wmsr/ops.hpp"
#include "wmsr/rng.hpp"
#include "wmsr/tape.hpp"

using namespace wmsr;
using testutil::conv2d_naive;
using testutil::gradcheck;
using testutil::random_grid;

TEST_CASE("conv2d: all-ones 3x3 on 3x3 ones, pad 1") {
    Grid x(Shape(1, 1, 3, 3), 1.0);
    Grid k(Shape(1, 1, 3, 3), 1.0);
    Grid y = conv2d_fwd(x, k, nullptr, 1, 1);
    CHECK(y.shape == Shape(1, 1, 3, 3));
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0).epsilon(1e-12));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(y.at(0, 0, 2, 0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("conv2d: zero kernel and identity kernel") {
    Rng rng(7);
    Grid x = random_grid(rng, Shape(2, 3, 5, 4));
    Grid kz(Shape(2, 3, 3, 3), 0.0);
    Grid y = conv2d_fwd(x, kz, nullptr, 1, 1);
    for (double v : y.v) CHECK(v == 0.0);

    Grid ki(Shape(3, 3, 1, 1), 0.0);
    for (int c = 0; c < 3; ++c) ki.at(c, c, 0, 0) = 1.0;
    Grid y2 = conv2d_fwd(x, ki, nullptr, 1, 0);
    CHECK(max_abs_diff(x, y2) == 0.0);
}

TEST_CASE("conv2d matches naive oracle across strides and pads") {
    Rng rng(11);
    const struct { Shape xs, ks; int stride, pad; } cases[] = {
        {Shape(2, 3, 7, 6), Shape(4, 3, 3, 3), 1, 1},
        {Shape(1, 2, 8, 8), Shape(3, 2, 5, 5), 1, 2},
        {Shape(2, 4, 9, 7), Shape(2, 4, 3, 3), 2, 1},
        {Shape(1, 1, 6, 6), Shape(2, 1, 3, 3), 1, 0},
        {Shape(1, 3, 5, 5), Shape(3, 3, 1, 1), 1, 0},
    };
    for (const auto& cs : cases) {
        Grid x = random_grid(rng, cs.xs);
        Grid k = random_grid(rng, cs.ks);
        Grid b = random_grid(rng, Shape(1, cs.ks.b, 1, 1));
        Grid got = conv2d_fwd(x, k, &b, cs.stride, cs.pad);
        Grid want = conv2d_naive(x, k, &b, cs.stride, cs.pad);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d: shape mismatches rejected with dimension report") {
    Grid x(Shape(1, 3, 4, 4));
    Grid k(Shape(2, 2, 3, 3));
    CHECK_THROWS_WITH_AS(conv2d_fwd(x, k, nullptr, 1, 1),
                         doctest::Contains("channels"), std::invalid_argument);
    Grid keven(Shape(2, 3, 2, 2));
    CHECK_THROWS_AS(conv2d_fwd(x, keven, nullptr, 1, 1), std::invalid_argument);
    Grid kbig(Shape(2, 3, 9, 9));
    CHECK_THROWS_AS(conv2d_fwd(x, kbig, nullptr, 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d/linear linearity to 1e-10") {
    Rng rng(13);
    Grid x1 = random_grid(rng, Shape(1, 3, 6, 6));
    Grid x2 = random_grid(rng, Shape(1, 3, 6, 6));
    Grid k = random_grid(rng, Shape(4, 3, 3, 3));
    const double a = 1.7, b = -0.4;
    Grid mix(x1.shape);
    for (size_t i = 0; i < mix.v.size(); ++i)
        mix.v[i] = a * x1.v[i] + b * x2.v[i];
    Grid y1 = conv2d_fwd(x1, k, nullptr, 1, 1);
    Grid y2 = conv2d_fwd(x2, k, nullptr, 1, 1);
    Grid ym = conv2d_fwd(mix, k, nullptr, 1, 1);
    Grid want(y1.shape);
    for (size_t i = 0; i < want.v.size(); ++i)
        want.v[i] = a * y1.v[i] + b * y2.v[i];
    CHECK(max_abs_diff(ym, want) < 1e-10);

    Grid w = random_grid(rng, Shape(2, 3, 1, 1));
    Grid l1 = linear_fwd(x1, w, nullptr);
    Grid l2 = linear_fwd(x2, w, nullptr);
    Grid lm = linear_fwd(mix, w, nullptr);
    Grid lwant(l1.shape);
    for (size_t i = 0; i < lwant.v.size(); ++i)
        lwant.v[i] = a * l1.v[i] + b * l2.v[i];
    CHECK(max_abs_diff(lm, lwant) < 1e-10);
}

TEST_CASE("depthwise_conv2d: channel independence and 9c interior") {
    Rng rng(17);
    Grid x = random_grid(rng, Shape(1, 2, 5, 5));
    Grid k(Shape(2, 1, 3, 3));
    rng.fill_normal(k, 0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k.at(0, 0, i, j) = 0.0;
    Grid y = depthwise_conv2d_fwd(x, k, nullptr, 1);
    for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) CHECK(y.at(0, 0, h, w) == 0.0);

    Grid xc(Shape(1, 3, 5, 5));
    for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 5; ++h)
            for (int w = 0; w < 5; ++w) xc.at(0, c, h, w) = double(c + 1);
    Grid kones(Shape(3, 1, 3, 3), 1.0);
    Grid yc = depthwise_conv2d_fwd(xc, kones, nullptr, 1);
    for (int c = 0; c < 3; ++c)
        CHECK(yc.at(0, c, 2, 2) == doctest::Approx(9.0 * (c + 1)).epsilon(1e-12));
}

TEST_CASE("depthwise_conv2d equals block-diagonal conv2d") {
    Rng rng(19);
    const int C = 4;
    Grid x = random_grid(rng, Shape(2, C, 6, 5));
    Grid kd = random_grid(rng, Shape(C, 1, 3, 3));
    Grid kb(Shape(C, C, 3, 3), 0.0);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) kb.at(c, c, i, j) = kd.at(c, 0, i, j);
    Grid bias = random_grid(rng, Shape(1, C, 1, 1));
    Grid got = depthwise_conv2d_fwd(x, kd, &bias, 1);
    Grid want = conv2d_fwd(x, kb, &bias, 1, 1);
    CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("linear: identity, constant bias, hand multiply") {
    Rng rng(23);
    Grid x = random_grid(rng, Shape(1, 2, 3, 3));
    Grid wI(Shape(2, 2, 1, 1), 0.0);
    wI.at(0, 0, 0, 0) = 1.0;
    wI.at(1, 1, 0, 0) = 1.0;
    Grid y = linear_fwd(x, wI, nullptr);
    CHECK(max_abs_diff(x, y) == 0.0);

    Grid wz(Shape(2, 2, 1, 1), 0.0);
    Grid b(Shape(1, 2, 1, 1));
    b.v = {1.0, 2.0};
    Grid y2 = linear_fwd(x, wz, &b);
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
            CHECK(y2.at(0, 0, h, w) == 1.0);
            CHECK(y2.at(0, 1, h, w) == 2.0);
        }

    Grid x3 = random_grid(rng, Shape(1, 3, 2, 2));
    Grid w32 = random_grid(rng, Shape(2, 3, 1, 1));
    Grid y3 = linear_fwd(x3, w32, nullptr);
    for (int oc = 0; oc < 2; ++oc) {
        double s = 0.0;
        for (int ic = 0; ic < 3; ++ic)
            s += w32.at(oc, ic, 0, 0) * x3.at(0, ic, 1, 0);
        CHECK(y3.at(0, oc, 1, 0) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm: constant channels, (1,3) example, statistics") {
    Grid ones(Shape(1, 4, 2, 2), 3.14);
    Grid g1(Shape(1, 4, 1, 1), 1.0), b0(Shape(1, 4, 1, 1), 0.0);
    Grid y = layer_norm_fwd(ones, g1, b0, 1e-6);
    for (double v : y.v) CHECK(std::abs(v) < 1e-9);

    Grid x2(Shape(1, 2, 1, 1));
    x2.v = {1.0, 3.0};
    Grid g2(Shape(1, 2, 1, 1), 1.0), bz(Shape(1, 2, 1, 1), 0.0);
    Grid y2 = layer_norm_fwd(x2, g2, bz, 1e-6);
    CHECK(y2.v[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y2.v[1] == doctest::Approx(1.0).epsilon(1e-6));

    // Statistics identity; large scale keeps the eps bias below 1e-9.
    Rng rng(29);
    const int C = 16;
    Grid xr(Shape(1, C, 3, 3));
    rng.fill_normal(xr, 5.0, 100.0);
    Grid gC(Shape(1, C, 1, 1), 1.0), bC(Shape(1, C, 1, 1), 0.0);
    Grid yr = layer_norm_fwd(xr, gC, bC, 1e-6);
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 3; ++w) {
            double mu = 0.0, var = 0.0;
            for (int c = 0; c < C; ++c) mu += yr.at(0, c, h, w);
            mu /= C;
            for (int c = 0; c < C; ++c) {
                const double d = yr.at(0, c, h, w) - mu;
                var += d * d;
            }
            var /= C;
            CHECK(std::abs(mu) < 1e-9);
            CHECK(std::abs(var - 1.0) < 1e-9);
        }
}

TEST_CASE("layer_norm invariant to per-position channel-constant shift") {
    Rng rng(31);
    Grid x = random_grid(rng, Shape(1, 6, 4, 4));
    Grid g(Shape(1, 6, 1, 1)), b(Shape(1, 6, 1, 1));
    rng.fill_normal(g, 1.0, 0.2);
    rng.fill_normal(b, 0.0, 0.2);
    Grid y1 = layer_norm_fwd(x, g, b, 1e-6);
    Grid xs = x;
    for (int c = 0; c < 6; ++c)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) xs.at(0, c, h, w) += 10.0 + h - w;
    Grid y2 = layer_norm_fwd(xs, g, b, 1e-6);
    CHECK(max_abs_diff(y1, y2) < 1e-6);
}

TEST_CASE("activations: frozen points") {
    Grid x(Shape(1, 1, 1, 3));
    x.v = {0.0, std::log(3.0), 0.0};
    Grid s = sigmoid_fwd(x);
    CHECK(s.v[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.v[1] == doctest::Approx(0.75).epsilon(1e-12));
    Grid sl = silu_fwd(x);
    CHECK(sl.v[0] == 0.0);
    CHECK(softplus_scalar(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(softplus_scalar(100.0) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(sigmoid_scalar(-800.0) >= 0.0);
    CHECK(std::isfinite(softplus_scalar(-800.0)));
}

TEST_CASE("pixel_shuffle: index formula, r=1 identity, bijectivity") {
    Grid x(Shape(1, 4, 1, 1));
    x.v = {10.0, 20.0, 30.0, 40.0};
    Grid y = pixel_shuffle_fwd(x, 2);
    CHECK(y.shape == Shape(1, 1, 2, 2));
    CHECK(y.at(0, 0, 0, 0) == 10.0);
    CHECK(y.at(0, 0, 0, 1) == 20.0);
    CHECK(y.at(0, 0, 1, 0) == 30.0);
    CHECK(y.at(0, 0, 1, 1) == 40.0);

    Rng rng(37);
    Grid xr = random_grid(rng, Shape(2, 8, 3, 5));
    CHECK(max_abs_diff(pixel_shuffle_fwd(xr, 1), xr) == 0.0);
    Grid rt = pixel_unshuffle_fwd(pixel_shuffle_fwd(xr, 2), 2);
    CHECK(max_abs_diff(rt, xr) == 0.0);

    Grid shuf = pixel_shuffle_fwd(xr, 2);
    auto a = xr.v, b = shuf.v;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    Grid bad(Shape(1, 3, 2, 2));
    CHECK_THROWS_AS(pixel_shuffle_fwd(bad, 2), std::invalid_argument);
}

TEST_CASE("bicubic: constants, identity, ramp reproduction") {
    Grid c7(Shape(1, 1, 8, 6), 7.0);
    Grid d = bicubic_resize(c7, 4, 3);
    for (double v : d.v) CHECK(std::abs(v - 7.0) < 1e-12);
    Grid u = bicubic_resize(c7, 16, 12);
    for (double v : u.v) CHECK(std::abs(v - 7.0) < 1e-12);

    Rng rng(41);
    Grid xr = random_grid(rng, Shape(1, 2, 7, 9));
    Grid same = bicubic_resize(xr, 7, 9);
    CHECK(max_abs_diff(same, xr) < 1e-12);

    // Ramp along width, downsample x2: interior outputs sit at the source
    // midpoints, so they reproduce the linear values exactly.
    Grid ramp(Shape(1, 1, 4, 16));
    for (int h = 0; h < 4; ++h)
        for (int w = 0; w < 16; ++w) ramp.at(0, 0, h, w) = double(w);
    Grid half = bicubic_resize(ramp, 4, 8);
    for (int j = 1; j < 7; ++j)
        CHECK(half.at(0, 0, 2, j) ==
              doctest::Approx(2.0 * j + 0.5).epsilon(1e-12));

    // Linearity of the operator.
    Grid x1 = random_grid(rng, Shape(1, 1, 8, 8));
    Grid x2 = random_grid(rng, Shape(1, 1, 8, 8));
    Grid mix(x1.shape);
    for (size_t i = 0; i < mix.v.size(); ++i) mix.v[i] = 2.0 * x1.v[i] - 3.0 * x2.v[i];
    Grid y1 = bicubic_resize(x1, 4, 4), y2 = bicubic_resize(x2, 4, 4);
    Grid ym = bicubic_resize(mix, 4, 4);
    for (size_t i = 0; i < ym.v.size(); ++i)
        CHECK(std::abs(ym.v[i] - (2.0 * y1.v[i] - 3.0 * y2.v[i])) < 1e-10);

    CHECK_THROWS_AS(bicubic_resize(c7, 0, 3), std::invalid_argument);
}

TEST_CASE("tape: sum gradient, square gradient, scalar-only backward") {
    Tape t;
    Grid x(Shape(1, 1, 2, 2));
    x.v = {1.0, 2.0, 3.0, 4.0};
    const int xi = t.leaf(x, true);
    const int s = sum_all(t, xi);
    t.backward(s);
    for (double g : t.grad(xi).v) CHECK(g == 1.0);

    Tape t2;
    Grid x3(Shape(1, 1, 1, 1), 3.0);
    const int a = t2.leaf(x3, true);
    const int sq = mul(t2, a, a);
    const int l = sum_all(t2, sq);
    t2.backward(l);
    CHECK(t2.grad(a).v[0] == doctest::Approx(6.0).epsilon(1e-12));

    Tape t3;
    const int v = t3.leaf(Grid(Shape(1, 1, 2, 2), 1.0), true);
    CHECK_THROWS_AS(t3.backward(v), std::invalid_argument);
}

TEST_CASE("tape: unused parameter keeps exactly zero gradient") {
    ParamStore ps;
    Rng rng(43);
    Grid w = random_grid(rng, Shape(2, 2, 1, 1));
    const int used = ps.add("used", w);
    const int unused = ps.add("unused", random_grid(rng, Shape(2, 2, 1, 1)));
    Tape t;
    const int x = t.leaf(random_grid(rng, Shape(1, 2, 3, 3)), false);
    const int y = linear(t, x, t.param(ps, used), -1);
    const int loss = mean_all(t, y);
    t.backward(loss);
    ps.zero_grad();
    t.accumulate_param_grads(ps);
    bool any = false;
    for (double g : ps[used].grad.v) any = any || g != 0.0;
    CHECK(any);
    for (double g : ps[unused].grad.v) CHECK(g == 0.0);
}

TEST_CASE("gradcheck: conv2d on three shapes") {
    Rng rng(47);
    const struct { Shape xs, ks; int stride, pad; } cases[] = {
        {Shape(1, 2, 5, 5), Shape(3, 2, 3, 3), 1, 1},
        {Shape(2, 1, 6, 4), Shape(2, 1, 3, 3), 2, 1},
        {Shape(1, 3, 4, 4), Shape(2, 3, 1, 1), 1, 0},
    };
    for (const auto& cs : cases) {
        ParamStore ps;
        ps.add("x", random_grid(rng, cs.xs));
        ps.add("k", random_grid(rng, cs.ks, 0.5));
        ps.add("b", random_grid(rng, Shape(1, cs.ks.b, 1, 1), 0.3));
        auto build = [&](Tape& t, ParamStore& p) {
            const int y = conv2d(t, t.param(p, 0), t.param(p, 1), t.param(p, 2),
                                 cs.stride, cs.pad);
            // square the output so dL/dy depends on y
            return mean_all(t, mul(t, y, y));
        };
        auto r = gradcheck(ps, build);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
}

TEST_CASE("gradcheck: depthwise, linear, layer_norm") {
    Rng rng(53);
    {
        ParamStore ps;
        ps.add("x", random_grid(rng, Shape(1, 3, 4, 5)));
        ps.add("k", random_grid(rng, Shape(3, 1, 3, 3), 0.5));
        ps.add("b", random_grid(rng, Shape(1, 3, 1, 1), 0.3));
        auto build = [](Tape& t, ParamStore& p) {
            const int y =
                depthwise_conv2d(t, t.param(p, 0), t.param(p, 1), t.param(p, 2), 1);
            return mean_all(t, mul(t, y, y));
        };
        auto r = gradcheck(ps, build);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
    {
        ParamStore ps;
        ps.add("x", random_grid(rng, Shape(2, 3, 3, 3)));
        ps.add("w", random_grid(rng, Shape(4, 3, 1, 1), 0.5));
        ps.add("b", random_grid(rng, Shape(1, 4, 1, 1), 0.3));
        auto build = [](Tape& t, ParamStore& p) {
            const int y = linear(t, t.param(p, 0), t.param(p, 1), t.param(p, 2));
            return mean_all(t, mul(t, y, y));
        };
        auto r = gradcheck(ps, build);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
    {
        ParamStore ps;
        ps.add("x", random_grid(rng, Shape(1, 5, 3, 4)));
        ps.add("g", random_grid(rng, Shape(1, 5, 1, 1), 0.5));
        ps.add("b", random_grid(rng, Shape(1, 5, 1, 1), 0.5));
        auto build = [](Tape& t, ParamStore& p) {
            const int y =
                layer_norm(t, t.param(p, 0), t.param(p, 1), t.param(p, 2), 1e-6);
            return mean_all(t, mul(t, y, y));
        };
        auto r = gradcheck(ps, build);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
}

TEST_CASE("gradcheck: activations, shuffles, elementwise, reductions") {
    Rng rng(59);
    for (int trial = 0; trial < 3; ++trial) {
        ParamStore ps;
        ps.add("a", random_grid(rng, Shape(1, 4, 3 + trial, 4)));
        ps.add("b", random_grid(rng, Shape(1, 4, 3 + trial, 4)));
        auto build = [](Tape& t, ParamStore& p) {
            const int a = t.param(p, 0);
            const int b = t.param(p, 1);
            const int s = silu(t, a);
            const int g = sigmoid(t, b);
            const int m = mul(t, s, g);
            const int sh = pixel_shuffle(t, m, 2);
            const int us = pixel_unshuffle(t, sh, 2);
            const int d = sub(t, us, scale(t, add(t, a, b), 0.25));
            const int cat = concat_channels(t, {d, us});
            const int cut = slice_channels(t, cat, 2, 6);
            const int rep = repeat_channels(t, cut, 2);
            return mean_abs_diff(t, rep, scale(t, rep, -0.5));
        };
        auto r = gradcheck(ps, build);
        CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
    }
}

TEST_CASE("ParamStore: duplicates rejected, f32 quantization idempotent") {
    ParamStore ps;
    ps.add("w", Grid(Shape(1, 1, 1, 1), 0.1));
    CHECK_THROWS_AS(ps.add("w", Grid(Shape(1, 1, 1, 1))), std::invalid_argument);
    CHECK(ps.total_params() == 1);
    ps.quantize_to_f32();
    const double q = ps[0].value.v[0];
    CHECK(q == double(float(0.1)));
    ps.quantize_to_f32();
    CHECK(ps[0].value.v[0] == q);
}

TEST_CASE("Rng: determinism and serialization round trip") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    const std::string s = a.serialize();
    Rng c(0);
    c.deserialize(s);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == c.normal());
    for (int i = 0; i < 1000; ++i) {
        const double u = b.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("tape: no-grad mode skips closures and rejects backward") {
    Tape t(false);
    Grid x(Shape(1, 1, 2, 2), 2.0);
    const int xi = t.leaf(x, true);
    const int y = silu(t, xi);
    CHECK_FALSE(t.wants_grad(y));
    const int l = sum_all(t, y);
    CHECK_THROWS_AS(t.backward(l), std::invalid_argument);
    // values survive a clear through val_ptr
    auto keep = t.val_ptr(y);
    t.clear();
    CHECK(keep->shape == Shape(1, 1, 2, 2));
}
