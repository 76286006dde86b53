#include "wmsr/ops.hpp"

#include <cmath>
#include <cstring>

namespace wmsr {

namespace {

// C[M x N] += A[M x K] * B[K x N], row-major.
void gemm_acc(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int i = 0; i < M; ++i) {
        const double* Ai = A + std::int64_t(i) * K;
        double* Ci = C + std::int64_t(i) * N;
        for (int k = 0; k < K; ++k) {
            const double a = Ai[k];
            const double* Bk = B + std::int64_t(k) * N;
            for (int j = 0; j < N; ++j) Ci[j] += a * Bk[j];
        }
    }
}

// C[M x K] += A[M x N] * B[K x N]^T, row-major (contiguous dot products).
void gemm_abt_acc(int M, int N, int K, const double* A, const double* B,
                  double* C) {
    for (int i = 0; i < M; ++i) {
        const double* Ai = A + std::int64_t(i) * N;
        double* Ci = C + std::int64_t(i) * K;
        for (int k = 0; k < K; ++k) {
            const double* Bk = B + std::int64_t(k) * N;
            double s = 0.0;
            for (int j = 0; j < N; ++j) s += Ai[j] * Bk[j];
            Ci[k] += s;
        }
    }
}

// Patch matrix for one sample: rows (ic, ki, kj), columns (oh, ow).
void im2col(const double* x, int inC, int H, int W, int kh, int kw, int stride,
            int pad, int outH, int outW, double* panel) {
    const int L = outH * outW;
    for (int ic = 0; ic < inC; ++ic) {
        const double* xc = x + std::int64_t(ic) * H * W;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = panel + (std::int64_t(ic) * kh * kw + ki * kw + kj) * L;
                for (int oh = 0; oh < outH; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    double* dst = row + std::int64_t(oh) * outW;
                    if (ih < 0 || ih >= H) {
                        std::memset(dst, 0, sizeof(double) * size_t(outW));
                        continue;
                    }
                    const double* xr = xc + std::int64_t(ih) * W;
                    for (int ow = 0; ow < outW; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[ow] = (iw < 0 || iw >= W) ? 0.0 : xr[iw];
                    }
                }
            }
        }
    }
}

void conv_out_size(const Shape& xs, const Shape& ks, int stride, int pad,
                   int& outH, int& outW) {
    outH = (xs.h + 2 * pad - ks.h) / stride + 1;
    outW = (xs.w + 2 * pad - ks.w) / stride + 1;
    require(xs.h + 2 * pad >= ks.h && xs.w + 2 * pad >= ks.w && outH > 0 && outW > 0,
            "conv2d: non-positive output size for input " + xs.str() +
                " kernel " + ks.str() + " stride " + std::to_string(stride) +
                " pad " + std::to_string(pad));
}

void check_conv_args(const Grid& x, const Grid& k, const Grid* bias, int stride,
                     int pad) {
    require(k.shape.h % 2 == 1 && k.shape.w % 2 == 1,
            "conv2d: kernel size must be odd, got " + k.shape.str());
    require(k.shape.c == x.shape.c,
            "conv2d: input channels " + std::to_string(x.shape.c) +
                " do not match kernel " + k.shape.str());
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: pad must be >= 0");
    if (bias)
        require(bias->numel() == k.shape.b,
                "conv2d: bias size " + std::to_string(bias->numel()) +
                    " does not match out channels " + std::to_string(k.shape.b));
}

// Creates the node first, then wires a closure that sees the node's own grad.
template <typename F>
int make_op(Tape& t, Grid value, const std::vector<int>& parents, F&& bw) {
    const int id = t.op(std::move(value), parents, nullptr);
    Tape::Node& n = t.node(id);
    if (n.requires_grad)
        n.backward = [id, f = std::forward<F>(bw)](Tape& tt) {
            f(tt, tt.node(id).grad);
        };
    return id;
}

void add_into(Grid& dst, const Grid& src) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    // log(1 + e^x) without overflow for large |x|
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------- conv2d --

Grid conv2d_fwd(const Grid& x, const Grid& k, const Grid* bias, int stride,
                int pad) {
    check_conv_args(x, k, bias, stride, pad);
    const int B = x.shape.b, inC = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int outC = k.shape.b, kh = k.shape.h, kw = k.shape.w;
    int outH = 0, outW = 0;
    conv_out_size(x.shape, k.shape, stride, pad, outH, outW);
    const int L = outH * outW, K = inC * kh * kw;

    Grid out(Shape(B, outC, outH, outW));
    std::vector<double> panel(size_t(K) * L);
    for (int b = 0; b < B; ++b) {
        im2col(x.data() + x.idx(b, 0, 0, 0), inC, H, W, kh, kw, stride, pad,
               outH, outW, panel.data());
        double* ob = out.data() + out.idx(b, 0, 0, 0);
        if (bias) {
            for (int oc = 0; oc < outC; ++oc) {
                const double bv = bias->v[size_t(oc)];
                double* row = ob + std::int64_t(oc) * L;
                for (int p = 0; p < L; ++p) row[p] = bv;
            }
        }
        gemm_acc(outC, K, L, k.data(), panel.data(), ob);
    }
    return out;
}

// dL/dx for stride 1: correlation of dy with the spatially flipped kernel,
// in/out channels swapped. Other strides fall back to a scatter loop.
Grid conv2d_bwd_x(const Grid& dy, const Grid& k, const Shape& xs, int stride,
                  int pad) {
    const int outC = k.shape.b, inC = k.shape.c, kh = k.shape.h, kw = k.shape.w;
    if (stride == 1) {
        Grid kflip(Shape(inC, outC, kh, kw));
        for (int oc = 0; oc < outC; ++oc)
            for (int ic = 0; ic < inC; ++ic)
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j)
                        kflip.at(ic, oc, i, j) = k.at(oc, ic, kh - 1 - i, kw - 1 - j);
        return conv2d_fwd(dy, kflip, nullptr, 1, kh - 1 - pad);
    }
    Grid dx(xs, 0.0);
    for (int b = 0; b < dy.shape.b; ++b)
        for (int oc = 0; oc < outC; ++oc)
            for (int oh = 0; oh < dy.shape.h; ++oh)
                for (int ow = 0; ow < dy.shape.w; ++ow) {
                    const double g = dy.at(b, oc, oh, ow);
                    for (int ic = 0; ic < inC; ++ic)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int ih = oh * stride - pad + i;
                                const int iw = ow * stride - pad + j;
                                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w) continue;
                                dx.at(b, ic, ih, iw) += g * k.at(oc, ic, i, j);
                            }
                }
    return dx;
}

void conv2d_bwd_k_acc(const Grid& dy, const Grid& x, const Shape& ks,
                      int stride, int pad, Grid& dk) {
    const int inC = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int outC = ks.b, kh = ks.h, kw = ks.w;
    const int outH = dy.shape.h, outW = dy.shape.w, L = outH * outW;
    const int K = inC * kh * kw;
    std::vector<double> panel(size_t(K) * L);
    for (int b = 0; b < x.shape.b; ++b) {
        im2col(x.data() + x.idx(b, 0, 0, 0), inC, H, W, kh, kw, stride, pad,
               outH, outW, panel.data());
        gemm_abt_acc(outC, L, K, dy.data() + dy.idx(b, 0, 0, 0), panel.data(),
                     dk.data());
    }
}

namespace {

void bias_grad_acc(const Grid& dy, Grid& db) {
    const int B = dy.shape.b, C = dy.shape.c;
    const std::int64_t L = std::int64_t(dy.shape.h) * dy.shape.w;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* row = dy.data() + dy.idx(b, c, 0, 0);
            double s = 0.0;
            for (std::int64_t p = 0; p < L; ++p) s += row[p];
            db.v[size_t(c)] += s;
        }
}

}  // namespace

int conv2d(Tape& t, int x, int k, int bias, int stride, int pad) {
    const Grid* bg = bias >= 0 ? &t.val(bias) : nullptr;
    Grid y = conv2d_fwd(t.val(x), t.val(k), bg, stride, pad);
    std::vector<int> parents{x, k};
    if (bias >= 0) parents.push_back(bias);
    auto xv = t.val_ptr(x);
    auto kv = t.val_ptr(k);
    return make_op(t, std::move(y), parents,
                   [=](Tape& tt, const Grid& dy) {
                       if (tt.wants_grad(x))
                           add_into(tt.grad_accum(x),
                                    conv2d_bwd_x(dy, *kv, xv->shape, stride, pad));
                       if (tt.wants_grad(k))
                           conv2d_bwd_k_acc(dy, *xv, kv->shape, stride, pad,
                                            tt.grad_accum(k));
                       if (bias >= 0 && tt.wants_grad(bias))
                           bias_grad_acc(dy, tt.grad_accum(bias));
                   });
}

// ------------------------------------------------------ depthwise conv2d --

Grid depthwise_conv2d_fwd(const Grid& x, const Grid& k, const Grid* bias,
                          int pad) {
    const int B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    require(k.shape.c == 1 && k.shape.b == C,
            "depthwise_conv2d: kernel must be (C,1,kh,kw) with C=" +
                std::to_string(C) + ", got " + k.shape.str());
    require(k.shape.h % 2 == 1 && k.shape.w % 2 == 1,
            "depthwise_conv2d: kernel size must be odd, got " + k.shape.str());
    if (bias)
        require(bias->numel() == C, "depthwise_conv2d: bias size mismatch");
    const int kh = k.shape.h, kw = k.shape.w;
    Grid out(Shape(B, C, H, W));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double bv = bias ? bias->v[size_t(c)] : 0.0;
            for (int oh = 0; oh < H; ++oh)
                for (int ow = 0; ow < W; ++ow) {
                    double s = bv;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = oh - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < kw; ++j) {
                            const int iw = ow - pad + j;
                            if (iw < 0 || iw >= W) continue;
                            s += k.at(c, 0, i, j) * x.at(b, c, ih, iw);
                        }
                    }
                    out.at(b, c, oh, ow) = s;
                }
        }
    return out;
}

int depthwise_conv2d(Tape& t, int x, int k, int bias, int pad) {
    const Grid* bg = bias >= 0 ? &t.val(bias) : nullptr;
    Grid y = depthwise_conv2d_fwd(t.val(x), t.val(k), bg, pad);
    std::vector<int> parents{x, k};
    if (bias >= 0) parents.push_back(bias);
    auto xv = t.val_ptr(x);
    auto kv = t.val_ptr(k);
    return make_op(t, std::move(y), parents, [=](Tape& tt, const Grid& dy) {
        const int B = xv->shape.b, C = xv->shape.c, H = xv->shape.h, W = xv->shape.w;
        const int kh = kv->shape.h, kw = kv->shape.w;
        const bool gx = tt.wants_grad(x), gk = tt.wants_grad(k);
        if (gx || gk) {
            Grid* dx = gx ? &tt.grad_accum(x) : nullptr;
            Grid* dk = gk ? &tt.grad_accum(k) : nullptr;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int oh = 0; oh < H; ++oh)
                        for (int ow = 0; ow < W; ++ow) {
                            const double g = dy.at(b, c, oh, ow);
                            for (int i = 0; i < kh; ++i) {
                                const int ih = oh - pad + i;
                                if (ih < 0 || ih >= H) continue;
                                for (int j = 0; j < kw; ++j) {
                                    const int iw = ow - pad + j;
                                    if (iw < 0 || iw >= W) continue;
                                    if (dx) dx->at(b, c, ih, iw) += g * kv->at(c, 0, i, j);
                                    if (dk) dk->at(c, 0, i, j) += g * xv->at(b, c, ih, iw);
                                }
                            }
                        }
        }
        if (bias >= 0 && tt.wants_grad(bias)) bias_grad_acc(dy, tt.grad_accum(bias));
    });
}

// ---------------------------------------------------------------- linear --

Grid linear_fwd(const Grid& x, const Grid& w, const Grid* bias) {
    require(w.shape.h == 1 && w.shape.w == 1,
            "linear: weight must be (Cout,Cin,1,1), got " + w.shape.str());
    require(w.shape.c == x.shape.c,
            "linear: input channels " + std::to_string(x.shape.c) +
                " do not match weight " + w.shape.str());
    if (bias)
        require(bias->numel() == w.shape.b, "linear: bias size mismatch");
    const int B = x.shape.b, Cin = x.shape.c, Cout = w.shape.b;
    const int L = x.shape.h * x.shape.w;
    Grid out(Shape(B, Cout, x.shape.h, x.shape.w));
    for (int b = 0; b < B; ++b) {
        double* ob = out.data() + out.idx(b, 0, 0, 0);
        if (bias)
            for (int oc = 0; oc < Cout; ++oc) {
                const double bv = bias->v[size_t(oc)];
                double* row = ob + std::int64_t(oc) * L;
                for (int p = 0; p < L; ++p) row[p] = bv;
            }
        gemm_acc(Cout, Cin, L, w.data(), x.data() + x.idx(b, 0, 0, 0), ob);
    }
    return out;
}

int linear(Tape& t, int x, int w, int bias) {
    const Grid* bg = bias >= 0 ? &t.val(bias) : nullptr;
    Grid y = linear_fwd(t.val(x), t.val(w), bg);
    std::vector<int> parents{x, w};
    if (bias >= 0) parents.push_back(bias);
    auto xv = t.val_ptr(x);
    auto wv = t.val_ptr(w);
    return make_op(t, std::move(y), parents, [=](Tape& tt, const Grid& dy) {
        const int B = xv->shape.b, Cin = xv->shape.c, Cout = wv->shape.b;
        const int L = xv->shape.h * xv->shape.w;
        if (tt.wants_grad(x)) {
            // dx = W^T dy per position
            Grid wt(Shape(Cin, Cout, 1, 1));
            for (int i = 0; i < Cout; ++i)
                for (int j = 0; j < Cin; ++j)
                    wt.at(j, i, 0, 0) = wv->at(i, j, 0, 0);
            Grid& dx = tt.grad_accum(x);
            for (int b = 0; b < B; ++b)
                gemm_acc(Cin, Cout, L, wt.data(), dy.data() + dy.idx(b, 0, 0, 0),
                         dx.data() + dx.idx(b, 0, 0, 0));
        }
        if (tt.wants_grad(w)) {
            Grid& dw = tt.grad_accum(w);
            for (int b = 0; b < B; ++b)
                gemm_abt_acc(Cout, L, Cin, dy.data() + dy.idx(b, 0, 0, 0),
                             xv->data() + xv->idx(b, 0, 0, 0), dw.data());
        }
        if (bias >= 0 && tt.wants_grad(bias)) bias_grad_acc(dy, tt.grad_accum(bias));
    });
}

// ------------------------------------------------------------ layer_norm --

Grid layer_norm_fwd(const Grid& x, const Grid& gamma, const Grid& beta,
                    double eps) {
    const int C = x.shape.c;
    require(gamma.numel() == C && beta.numel() == C,
            "layer_norm: gamma/beta must have C=" + std::to_string(C) +
                " entries");
    require(eps > 0.0, "layer_norm: eps must be > 0");
    Grid out(x.shape);
    const std::int64_t HW = std::int64_t(x.shape.h) * x.shape.w;
    for (int b = 0; b < x.shape.b; ++b) {
        const double* xb = x.data() + x.idx(b, 0, 0, 0);
        double* ob = out.data() + out.idx(b, 0, 0, 0);
        for (std::int64_t p = 0; p < HW; ++p) {
            double mu = 0.0;
            for (int c = 0; c < C; ++c) mu += xb[c * HW + p];
            mu /= C;
            double var = 0.0;
            for (int c = 0; c < C; ++c) {
                const double d = xb[c * HW + p] - mu;
                var += d * d;
            }
            var /= C;
            const double s = 1.0 / std::sqrt(var + eps);
            for (int c = 0; c < C; ++c)
                ob[c * HW + p] = gamma.v[size_t(c)] * (xb[c * HW + p] - mu) * s +
                                 beta.v[size_t(c)];
        }
    }
    return out;
}

int layer_norm(Tape& t, int x, int gamma, int beta, double eps) {
    Grid y = layer_norm_fwd(t.val(x), t.val(gamma), t.val(beta), eps);
    auto xv = t.val_ptr(x);
    auto gv = t.val_ptr(gamma);
    return make_op(t, std::move(y), {x, gamma, beta},
                   [=](Tape& tt, const Grid& dy) {
        const int C = xv->shape.c;
        const std::int64_t HW = std::int64_t(xv->shape.h) * xv->shape.w;
        const bool gx = tt.wants_grad(x);
        const bool gg = tt.wants_grad(gamma), gb = tt.wants_grad(beta);
        Grid* dxg = gx ? &tt.grad_accum(x) : nullptr;
        Grid* dgg = gg ? &tt.grad_accum(gamma) : nullptr;
        Grid* dbg = gb ? &tt.grad_accum(beta) : nullptr;
        std::vector<double> xhat(static_cast<size_t>(C));
        for (int b = 0; b < xv->shape.b; ++b) {
            const double* xb = xv->data() + xv->idx(b, 0, 0, 0);
            const double* dyb = dy.data() + dy.idx(b, 0, 0, 0);
            for (std::int64_t p = 0; p < HW; ++p) {
                double mu = 0.0;
                for (int c = 0; c < C; ++c) mu += xb[c * HW + p];
                mu /= C;
                double var = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double d = xb[c * HW + p] - mu;
                    var += d * d;
                }
                var /= C;
                const double s = 1.0 / std::sqrt(var + eps);
                double m1 = 0.0, m2 = 0.0;
                for (int c = 0; c < C; ++c) {
                    xhat[size_t(c)] = (xb[c * HW + p] - mu) * s;
                    const double gy = dyb[c * HW + p] * gv->v[size_t(c)];
                    m1 += gy;
                    m2 += gy * xhat[size_t(c)];
                }
                m1 /= C;
                m2 /= C;
                for (int c = 0; c < C; ++c) {
                    const double gy = dyb[c * HW + p] * gv->v[size_t(c)];
                    if (dxg)
                        dxg->data()[dxg->idx(b, c, 0, 0) + p] +=
                            s * (gy - m1 - xhat[size_t(c)] * m2);
                    if (dgg) dgg->v[size_t(c)] += dyb[c * HW + p] * xhat[size_t(c)];
                    if (dbg) dbg->v[size_t(c)] += dyb[c * HW + p];
                }
            }
        }
    });
}

// ----------------------------------------------------------- activations --

Grid silu_fwd(const Grid& x) {
    Grid y(x.shape);
    for (size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = x.v[i] * sigmoid_scalar(x.v[i]);
    return y;
}

Grid sigmoid_fwd(const Grid& x) {
    Grid y(x.shape);
    for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = sigmoid_scalar(x.v[i]);
    return y;
}

int silu(Tape& t, int x) {
    Grid y = silu_fwd(t.val(x));
    auto xv = t.val_ptr(x);
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (!tt.wants_grad(x)) return;
        Grid& dx = tt.grad_accum(x);
        for (size_t i = 0; i < dx.v.size(); ++i) {
            const double s = sigmoid_scalar(xv->v[i]);
            dx.v[i] += dy.v[i] * s * (1.0 + xv->v[i] * (1.0 - s));
        }
    });
}

int sigmoid(Tape& t, int x) {
    Grid y = sigmoid_fwd(t.val(x));
    const int id = t.op(std::move(y), {x}, nullptr);
    Tape::Node& n = t.node(id);
    if (n.requires_grad) {
        auto yv = t.val_ptr(id);
        n.backward = [=](Tape& tt) {
            if (!tt.wants_grad(x)) return;
            const Grid& dy = tt.node(id).grad;
            Grid& dx = tt.grad_accum(x);
            for (size_t i = 0; i < dx.v.size(); ++i)
                dx.v[i] += dy.v[i] * yv->v[i] * (1.0 - yv->v[i]);
        };
    }
    return id;
}

// --------------------------------------------------------- pixel shuffle --

Grid pixel_shuffle_fwd(const Grid& x, int r) {
    require(r >= 1, "pixel_shuffle: r must be >= 1");
    require(x.shape.c % (r * r) == 0,
            "pixel_shuffle: channels " + std::to_string(x.shape.c) +
                " not divisible by r^2=" + std::to_string(r * r));
    const int B = x.shape.b, C = x.shape.c / (r * r), H = x.shape.h, W = x.shape.w;
    Grid out(Shape(B, C, r * H, r * W));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            out.at(b, c, r * h + i, r * w + j) =
                                x.at(b, c * r * r + i * r + j, h, w);
    return out;
}

Grid pixel_unshuffle_fwd(const Grid& x, int r) {
    require(r >= 1, "pixel_unshuffle: r must be >= 1");
    require(x.shape.h % r == 0 && x.shape.w % r == 0,
            "pixel_unshuffle: spatial dims " + x.shape.str() +
                " not divisible by r=" + std::to_string(r));
    const int B = x.shape.b, C = x.shape.c, H = x.shape.h / r, W = x.shape.w / r;
    Grid out(Shape(B, C * r * r, H, W));
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < r; ++j)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            out.at(b, c * r * r + i * r + j, h, w) =
                                x.at(b, c, r * h + i, r * w + j);
    return out;
}

int pixel_shuffle(Tape& t, int x, int r) {
    Grid y = pixel_shuffle_fwd(t.val(x), r);
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (tt.wants_grad(x)) add_into(tt.grad_accum(x), pixel_unshuffle_fwd(dy, r));
    });
}

int pixel_unshuffle(Tape& t, int x, int r) {
    Grid y = pixel_unshuffle_fwd(t.val(x), r);
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (tt.wants_grad(x)) add_into(tt.grad_accum(x), pixel_shuffle_fwd(dy, r));
    });
}

// ------------------------------------------------------------ elementwise --

int add(Tape& t, int a, int b) {
    require_same_shape(t.val(a), t.val(b), "add");
    Grid y = t.val(a);
    add_into(y, t.val(b));
    return make_op(t, std::move(y), {a, b}, [=](Tape& tt, const Grid& dy) {
        if (tt.wants_grad(a)) add_into(tt.grad_accum(a), dy);
        if (tt.wants_grad(b)) add_into(tt.grad_accum(b), dy);
    });
}

int sub(Tape& t, int a, int b) {
    require_same_shape(t.val(a), t.val(b), "sub");
    Grid y = t.val(a);
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] -= t.val(b).v[i];
    return make_op(t, std::move(y), {a, b}, [=](Tape& tt, const Grid& dy) {
        if (tt.wants_grad(a)) add_into(tt.grad_accum(a), dy);
        if (tt.wants_grad(b)) {
            Grid& db = tt.grad_accum(b);
            for (size_t i = 0; i < db.v.size(); ++i) db.v[i] -= dy.v[i];
        }
    });
}

int mul(Tape& t, int a, int b) {
    require_same_shape(t.val(a), t.val(b), "mul");
    Grid y = t.val(a);
    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] *= t.val(b).v[i];
    auto av = t.val_ptr(a);
    auto bv = t.val_ptr(b);
    return make_op(t, std::move(y), {a, b}, [=](Tape& tt, const Grid& dy) {
        if (tt.wants_grad(a)) {
            Grid& da = tt.grad_accum(a);
            for (size_t i = 0; i < da.v.size(); ++i) da.v[i] += dy.v[i] * bv->v[i];
        }
        if (tt.wants_grad(b)) {
            Grid& db = tt.grad_accum(b);
            for (size_t i = 0; i < db.v.size(); ++i) db.v[i] += dy.v[i] * av->v[i];
        }
    });
}

int scale(Tape& t, int a, double s) {
    Grid y = t.val(a);
    for (double& x : y.v) x *= s;
    return make_op(t, std::move(y), {a}, [=](Tape& tt, const Grid& dy) {
        if (!tt.wants_grad(a)) return;
        Grid& da = tt.grad_accum(a);
        for (size_t i = 0; i < da.v.size(); ++i) da.v[i] += s * dy.v[i];
    });
}

// ----------------------------------------------------- channel shuffling --

int concat_channels(Tape& t, const std::vector<int>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    const Grid& first = t.val(xs[0]);
    int Ctot = 0;
    for (int id : xs) {
        const Grid& g = t.val(id);
        require(g.shape.b == first.shape.b && g.shape.h == first.shape.h &&
                    g.shape.w == first.shape.w,
                "concat_channels: mismatched shapes " + first.shape.str() +
                    " vs " + g.shape.str());
        Ctot += g.shape.c;
    }
    Grid y(Shape(first.shape.b, Ctot, first.shape.h, first.shape.w));
    const std::int64_t HW = std::int64_t(first.shape.h) * first.shape.w;
    int c0 = 0;
    for (int id : xs) {
        const Grid& g = t.val(id);
        for (int b = 0; b < g.shape.b; ++b)
            std::memcpy(y.data() + y.idx(b, c0, 0, 0),
                        g.data() + g.idx(b, 0, 0, 0),
                        sizeof(double) * size_t(g.shape.c) * size_t(HW));
        c0 += g.shape.c;
    }
    std::vector<int> offsets;
    int off = 0;
    for (int id : xs) {
        offsets.push_back(off);
        off += t.val(id).shape.c;
    }
    std::vector<int> parents = xs;
    return make_op(t, std::move(y), parents, [=](Tape& tt, const Grid& dy) {
        const std::int64_t HW2 = std::int64_t(dy.shape.h) * dy.shape.w;
        for (size_t i = 0; i < parents.size(); ++i) {
            const int id = parents[i];
            if (!tt.wants_grad(id)) continue;
            Grid& dx = tt.grad_accum(id);
            for (int b = 0; b < dx.shape.b; ++b) {
                const double* src = dy.data() + dy.idx(b, offsets[i], 0, 0);
                double* dst = dx.data() + dx.idx(b, 0, 0, 0);
                for (std::int64_t p = 0; p < std::int64_t(dx.shape.c) * HW2; ++p)
                    dst[p] += src[p];
            }
        }
    });
}

int slice_channels(Tape& t, int x, int c0, int c1) {
    const Grid& g = t.val(x);
    require(0 <= c0 && c0 < c1 && c1 <= g.shape.c,
            "slice_channels: bad range [" + std::to_string(c0) + "," +
                std::to_string(c1) + ") for " + g.shape.str());
    const std::int64_t HW = std::int64_t(g.shape.h) * g.shape.w;
    Grid y(Shape(g.shape.b, c1 - c0, g.shape.h, g.shape.w));
    for (int b = 0; b < g.shape.b; ++b)
        std::memcpy(y.data() + y.idx(b, 0, 0, 0), g.data() + g.idx(b, c0, 0, 0),
                    sizeof(double) * size_t(c1 - c0) * size_t(HW));
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (!tt.wants_grad(x)) return;
        Grid& dx = tt.grad_accum(x);
        const std::int64_t HW2 = std::int64_t(dx.shape.h) * dx.shape.w;
        for (int b = 0; b < dx.shape.b; ++b) {
            double* dst = dx.data() + dx.idx(b, c0, 0, 0);
            const double* src = dy.data() + dy.idx(b, 0, 0, 0);
            for (std::int64_t p = 0; p < std::int64_t(c1 - c0) * HW2; ++p)
                dst[p] += src[p];
        }
    });
}

int repeat_channels(Tape& t, int x, int times) {
    require(times >= 1, "repeat_channels: times must be >= 1");
    std::vector<int> xs(size_t(times), x);
    return concat_channels(t, xs);
}

// -------------------------------------------------------------- reductions --

int sum_all(Tape& t, int x) {
    double s = 0.0;
    for (double v : t.val(x).v) s += v;
    Grid y(Shape(1, 1, 1, 1));
    y.v[0] = s;
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (!tt.wants_grad(x)) return;
        Grid& dx = tt.grad_accum(x);
        for (double& v : dx.v) v += dy.v[0];
    });
}

int mean_all(Tape& t, int x) {
    const double n = double(t.val(x).numel());
    double s = 0.0;
    for (double v : t.val(x).v) s += v;
    Grid y(Shape(1, 1, 1, 1));
    y.v[0] = s / n;
    return make_op(t, std::move(y), {x}, [=](Tape& tt, const Grid& dy) {
        if (!tt.wants_grad(x)) return;
        Grid& dx = tt.grad_accum(x);
        const double g = dy.v[0] / n;
        for (double& v : dx.v) v += g;
    });
}

int mean_abs_diff(Tape& t, int a, int b) {
    require_same_shape(t.val(a), t.val(b), "mean_abs_diff");
    auto av = t.val_ptr(a);
    auto bv = t.val_ptr(b);
    const double n = double(av->numel());
    double s = 0.0;
    for (size_t i = 0; i < av->v.size(); ++i) s += std::abs(av->v[i] - bv->v[i]);
    Grid y(Shape(1, 1, 1, 1));
    y.v[0] = s / n;
    return make_op(t, std::move(y), {a, b}, [=](Tape& tt, const Grid& dy) {
        const double g = dy.v[0] / n;
        const bool ga = tt.wants_grad(a), gb = tt.wants_grad(b);
        Grid* da = ga ? &tt.grad_accum(a) : nullptr;
        Grid* db = gb ? &tt.grad_accum(b) : nullptr;
        for (size_t i = 0; i < av->v.size(); ++i) {
            const double d = av->v[i] - bv->v[i];
            const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (da) da->v[i] += g * sg;
            if (db) db->v[i] -= g * sg;
        }
    });
}

}  // namespace wmsr
