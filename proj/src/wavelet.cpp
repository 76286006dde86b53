#include "wmsr/wavelet.hpp"

#include "wmsr/ops.hpp"

namespace wmsr {

namespace {

void check_even(const Grid& x, const char* who) {
    require(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
            std::string(who) + ": odd spatial dims " + x.shape.str() +
                "; pad to even first (replicate_pad_even)");
    require(x.shape.h >= 2 && x.shape.w >= 2,
            std::string(who) + ": input too small " + x.shape.str());
}

}  // namespace

Grid replicate_pad_even(const Grid& x) {
    const int H = x.shape.h, W = x.shape.w;
    const int H2 = H + (H % 2), W2 = W + (W % 2);
    if (H2 == H && W2 == W) return x;
    Grid out(Shape(x.shape.b, x.shape.c, H2, W2));
    for (int b = 0; b < x.shape.b; ++b)
        for (int c = 0; c < x.shape.c; ++c)
            for (int h = 0; h < H2; ++h)
                for (int w = 0; w < W2; ++w)
                    out.at(b, c, h, w) =
                        x.at(b, c, std::min(h, H - 1), std::min(w, W - 1));
    return out;
}

Grid haar_dwt_stack_fwd(const Grid& x) {
    check_even(x, "haar_dwt");
    const int B = x.shape.b, C = x.shape.c, H = x.shape.h / 2, W = x.shape.w / 2;
    Grid out(Shape(B, 4 * C, H, W));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double a = x.at(b, c, 2 * i, 2 * j);
                    const double bb = x.at(b, c, 2 * i, 2 * j + 1);
                    const double cc = x.at(b, c, 2 * i + 1, 2 * j);
                    const double d = x.at(b, c, 2 * i + 1, 2 * j + 1);
                    out.at(b, c, i, j) = 0.5 * (a + bb + cc + d);
                    out.at(b, C + c, i, j) = 0.5 * (a - bb + cc - d);
                    out.at(b, 2 * C + c, i, j) = 0.5 * (a + bb - cc - d);
                    out.at(b, 3 * C + c, i, j) = 0.5 * (a - bb - cc + d);
                }
    return out;
}

Grid haar_idwt_stack_fwd(const Grid& bands) {
    require(bands.shape.c % 4 == 0,
            "haar_idwt: stacked bands need 4k channels, got " +
                bands.shape.str());
    const int B = bands.shape.b, C = bands.shape.c / 4;
    const int H = bands.shape.h, W = bands.shape.w;
    Grid out(Shape(B, C, 2 * H, 2 * W));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double ll = bands.at(b, c, i, j);
                    const double lh = bands.at(b, C + c, i, j);
                    const double hl = bands.at(b, 2 * C + c, i, j);
                    const double hh = bands.at(b, 3 * C + c, i, j);
                    out.at(b, c, 2 * i, 2 * j) = 0.5 * (ll + lh + hl + hh);
                    out.at(b, c, 2 * i, 2 * j + 1) = 0.5 * (ll - lh + hl - hh);
                    out.at(b, c, 2 * i + 1, 2 * j) = 0.5 * (ll + lh - hl - hh);
                    out.at(b, c, 2 * i + 1, 2 * j + 1) = 0.5 * (ll - lh - hl + hh);
                }
    return out;
}

WaveletBands haar_dwt(const Grid& x) {
    Grid s = haar_dwt_stack_fwd(x);
    const int C = x.shape.c;
    const int H = s.shape.h, W = s.shape.w;
    auto band = [&](int k) {
        Grid g(Shape(s.shape.b, C, H, W));
        for (int b = 0; b < s.shape.b; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j)
                        g.at(b, c, i, j) = s.at(b, k * C + c, i, j);
        return g;
    };
    return WaveletBands{band(0), band(1), band(2), band(3)};
}

Grid haar_idwt(const WaveletBands& b) {
    require_same_shape(b.ll, b.lh, "haar_idwt");
    require_same_shape(b.ll, b.hl, "haar_idwt");
    require_same_shape(b.ll, b.hh, "haar_idwt");
    const int C = b.ll.shape.c;
    Grid s(Shape(b.ll.shape.b, 4 * C, b.ll.shape.h, b.ll.shape.w));
    const Grid* bands[4] = {&b.ll, &b.lh, &b.hl, &b.hh};
    for (int k = 0; k < 4; ++k)
        for (int bb = 0; bb < s.shape.b; ++bb)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < s.shape.h; ++i)
                    for (int j = 0; j < s.shape.w; ++j)
                        s.at(bb, k * C + c, i, j) = bands[k]->at(bb, c, i, j);
    return haar_idwt_stack_fwd(s);
}

namespace {

template <typename F>
int unary_linear_op(Tape& t, int x, Grid value, F&& adjoint) {
    const int id = t.op(std::move(value), {x}, nullptr);
    Tape::Node& n = t.node(id);
    if (n.requires_grad)
        n.backward = [id, x, adj = std::forward<F>(adjoint)](Tape& tt) {
            if (!tt.wants_grad(x)) return;
            Grid dx = adj(tt.node(id).grad);
            Grid& acc = tt.grad_accum(x);
            for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += dx.v[i];
        };
    return id;
}

}  // namespace

// The transform is orthonormal, so the adjoint of dwt is idwt and vice versa.
int haar_dwt_stack(Tape& t, int x) {
    return unary_linear_op(t, x, haar_dwt_stack_fwd(t.val(x)),
                           [](const Grid& dy) { return haar_idwt_stack_fwd(dy); });
}

int haar_idwt_stack(Tape& t, int bands) {
    return unary_linear_op(t, bands, haar_idwt_stack_fwd(t.val(bands)),
                           [](const Grid& dy) { return haar_dwt_stack_fwd(dy); });
}

}  // namespace wmsr
