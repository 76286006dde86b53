#include "wmsr/objective.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "wmsr/ops.hpp"

namespace wmsr {
namespace {

constexpr double kPi = 3.14159265358979323846;

// c[k*n+m] = cos(2*pi*k*m/n), s likewise with sin.
struct Twiddle {
    std::vector<double> c, s;
};

Twiddle make_twiddle(int n) {
    Twiddle tw;
    tw.c.resize(static_cast<size_t>(n) * static_cast<size_t>(n));
    tw.s.resize(tw.c.size());
    for (int k = 0; k < n; ++k)
        for (int m = 0; m < n; ++m) {
            const double th = 2.0 * kPi * double(k) * double(m) / double(n);
            tw.c[size_t(k) * size_t(n) + size_t(m)] = std::cos(th);
            tw.s[size_t(k) * size_t(n) + size_t(m)] = std::sin(th);
        }
    return tw;
}

// Forward transform of one (H,W) plane into re/im (1/(HW) normalized).
void dft2_plane(const double* f, int H, int W, const Twiddle& twh,
                const Twiddle& tww, double* re, double* im) {
    std::vector<double> gre(static_cast<size_t>(H) * static_cast<size_t>(W));
    std::vector<double> gim(gre.size());
    for (int x = 0; x < H; ++x)
        for (int v = 0; v < W; ++v) {
            double ar = 0.0, ai = 0.0;
            const double* crow = &tww.c[size_t(v) * size_t(W)];
            const double* srow = &tww.s[size_t(v) * size_t(W)];
            for (int y = 0; y < W; ++y) {
                const double fv = f[size_t(x) * size_t(W) + size_t(y)];
                ar += fv * crow[y];
                ai -= fv * srow[y];
            }
            gre[size_t(x) * size_t(W) + size_t(v)] = ar;
            gim[size_t(x) * size_t(W) + size_t(v)] = ai;
        }
    const double norm = 1.0 / (double(H) * double(W));
    for (int u = 0; u < H; ++u)
        for (int v = 0; v < W; ++v) {
            double ar = 0.0, ai = 0.0;
            const double* crow = &twh.c[size_t(u) * size_t(H)];
            const double* srow = &twh.s[size_t(u) * size_t(H)];
            for (int x = 0; x < H; ++x) {
                const double gr = gre[size_t(x) * size_t(W) + size_t(v)];
                const double gi = gim[size_t(x) * size_t(W) + size_t(v)];
                // (gr + i*gi) * (cos - i*sin)
                ar += gr * crow[x] + gi * srow[x];
                ai += gi * crow[x] - gr * srow[x];
            }
            re[size_t(u) * size_t(W) + size_t(v)] = ar * norm;
            im[size_t(u) * size_t(W) + size_t(v)] = ai * norm;
        }
}

// Real part of the unnormalized adjoint transform:
// t(x,y) = Re sum_{u,v} (gre + i*gim)(u,v) * exp(+i*2*pi*(ux/H + vy/W)).
void adjoint_plane_re(const double* gre, const double* gim, int H, int W,
                      const Twiddle& twh, const Twiddle& tww, double* out) {
    std::vector<double> pre(static_cast<size_t>(H) * static_cast<size_t>(W));
    std::vector<double> pim(pre.size());
    for (int x = 0; x < H; ++x) {
        const double* crow = &twh.c[size_t(x) * size_t(H)];
        const double* srow = &twh.s[size_t(x) * size_t(H)];
        for (int v = 0; v < W; ++v) {
            double ar = 0.0, ai = 0.0;
            for (int u = 0; u < H; ++u) {
                const double gr = gre[size_t(u) * size_t(W) + size_t(v)];
                const double gi = gim[size_t(u) * size_t(W) + size_t(v)];
                // (gr + i*gi) * (cos + i*sin)
                ar += gr * crow[u] - gi * srow[u];
                ai += gi * crow[u] + gr * srow[u];
            }
            pre[size_t(x) * size_t(W) + size_t(v)] = ar;
            pim[size_t(x) * size_t(W) + size_t(v)] = ai;
        }
    }
    for (int x = 0; x < H; ++x)
        for (int y = 0; y < W; ++y) {
            double acc = 0.0;
            const double* crow = &tww.c[size_t(y) * size_t(W)];
            const double* srow = &tww.s[size_t(y) * size_t(W)];
            for (int v = 0; v < W; ++v) {
                acc += pre[size_t(x) * size_t(W) + size_t(v)] * crow[v] -
                       pim[size_t(x) * size_t(W) + size_t(v)] * srow[v];
            }
            out[size_t(x) * size_t(W) + size_t(y)] = acc;
        }
}

// Difference spectrum D = F(hr) - F(sr) for every (b,c) plane.
Spectrum diff_spectrum(const Grid& sr, const Grid& hr) {
    const Shape& s = sr.shape;
    Spectrum ssr = dft2(sr), shr = dft2(hr);
    Spectrum d{Grid(s), Grid(s)};
    for (size_t i = 0; i < d.re.v.size(); ++i) {
        d.re.v[i] = shr.re.v[i] - ssr.re.v[i];
        d.im.v[i] = shr.im.v[i] - ssr.im.v[i];
    }
    return d;
}

double freq_loss_from_diff(const Spectrum& d, const Grid* omega) {
    double acc = 0.0;
    for (size_t i = 0; i < d.re.v.size(); ++i) {
        const double p = d.re.v[i] * d.re.v[i] + d.im.v[i] * d.im.v[i];
        const double w = omega ? omega->v[i] : std::sqrt(p);
        acc += w * p;
    }
    return acc / double(d.re.v.size());
}

int freq_loss_impl(Tape& t, int sr, int hr, const Grid* fixed_omega) {
    const Grid& a = t.val(sr);
    const Grid& b = t.val(hr);
    require_same_shape(a, b, "freq_loss");
    if (fixed_omega) require_same_shape(a, *fixed_omega, "freq_loss weight");
    auto d = std::make_shared<Spectrum>(diff_spectrum(a, b));
    std::shared_ptr<Grid> om =
        fixed_omega ? std::make_shared<Grid>(*fixed_omega) : nullptr;
    Grid y(Shape{1, 1, 1, 1});
    y.v[0] = freq_loss_from_diff(*d, om.get());
    const int id = t.op(std::move(y), {sr, hr}, nullptr);
    Tape::Node& n = t.node(id);
    if (!n.requires_grad) return id;
    n.backward = [=](Tape& tt) {
        const double dy0 = tt.node(id).grad.v[0];
        const Shape& s = d->re.shape;
        const int H = s.h, W = s.w;
        const Twiddle twh = make_twiddle(H);
        const Twiddle tww = (W == H) ? twh : make_twiddle(W);
        const double m = double(d->re.v.size());
        const double coef = dy0 * 2.0 / (m * double(H) * double(W));
        const size_t plane = static_cast<size_t>(H) * static_cast<size_t>(W);
        std::vector<double> gre(plane), gim(plane), tplane(plane);
        for (int bi = 0; bi < s.b; ++bi)
            for (int ci = 0; ci < s.c; ++ci) {
                const size_t off =
                    (size_t(bi) * size_t(s.c) + size_t(ci)) * plane;
                for (size_t i = 0; i < plane; ++i) {
                    const double dr = d->re.v[off + i], di = d->im.v[off + i];
                    const double w =
                        om ? om->v[off + i]
                           : std::sqrt(dr * dr + di * di);
                    gre[i] = w * dr;
                    gim[i] = w * di;
                }
                adjoint_plane_re(gre.data(), gim.data(), H, W, twh, tww,
                                 tplane.data());
                if (tt.wants_grad(sr)) {
                    Grid& acc = tt.grad_accum(sr);
                    for (size_t i = 0; i < plane; ++i)
                        acc.v[off + i] -= coef * tplane[i];
                }
                if (tt.wants_grad(hr)) {
                    Grid& acc = tt.grad_accum(hr);
                    for (size_t i = 0; i < plane; ++i)
                        acc.v[off + i] += coef * tplane[i];
                }
            }
    };
    return id;
}

// Normalized 1D Gaussian window taps (sum 1), length 11, sigma 1.5.
std::vector<double> ssim_window() {
    constexpr int kHalf = 5;
    std::vector<double> g(2 * kHalf + 1);
    double sum = 0.0;
    for (int i = -kHalf; i <= kHalf; ++i) {
        g[size_t(i + kHalf)] = std::exp(-double(i * i) / (2.0 * 1.5 * 1.5));
        sum += g[size_t(i + kHalf)];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable Gaussian filtering of one (H,W) plane.
void gauss_valid(const double* f, int H, int W, const std::vector<double>& g,
                 std::vector<double>& out) {
    const int K = int(g.size());
    const int oh = H - K + 1, ow = W - K + 1;
    std::vector<double> tmp(static_cast<size_t>(H) * static_cast<size_t>(ow));
    for (int x = 0; x < H; ++x)
        for (int y = 0; y < ow; ++y) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k)
                acc += g[size_t(k)] * f[size_t(x) * size_t(W) + size_t(y + k)];
            tmp[size_t(x) * size_t(ow) + size_t(y)] = acc;
        }
    out.assign(static_cast<size_t>(oh) * static_cast<size_t>(ow), 0.0);
    for (int x = 0; x < oh; ++x)
        for (int y = 0; y < ow; ++y) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k)
                acc += g[size_t(k)] * tmp[size_t(x + k) * size_t(ow) + size_t(y)];
            out[size_t(x) * size_t(ow) + size_t(y)] = acc;
        }
}

}  // namespace

void validate(const LossWeights& w) {
    require(w.lambda_rec >= 0.0 && w.lambda_freq >= 0.0,
            "loss weights must be non-negative");
    require(w.lambda_rec > 0.0 || w.lambda_freq > 0.0,
            "at least one loss weight must be positive");
}

Spectrum dft2(const Grid& x) {
    const Shape& s = x.shape;
    Spectrum out{Grid(s), Grid(s)};
    const Twiddle twh = make_twiddle(s.h);
    const Twiddle tww = (s.w == s.h) ? twh : make_twiddle(s.w);
    const size_t plane = static_cast<size_t>(s.h) * static_cast<size_t>(s.w);
    for (int b = 0; b < s.b; ++b)
        for (int c = 0; c < s.c; ++c) {
            const size_t off = (size_t(b) * size_t(s.c) + size_t(c)) * plane;
            dft2_plane(x.v.data() + off, s.h, s.w, twh, tww,
                       out.re.v.data() + off, out.im.v.data() + off);
        }
    return out;
}

double rec_loss_value(const Grid& sr, const Grid& hr) {
    require_same_shape(sr, hr, "rec_loss");
    double acc = 0.0;
    for (size_t i = 0; i < sr.v.size(); ++i) acc += std::abs(sr.v[i] - hr.v[i]);
    return acc / double(sr.v.size());
}

double freq_loss_value(const Grid& sr, const Grid& hr) {
    require_same_shape(sr, hr, "freq_loss");
    return freq_loss_from_diff(diff_spectrum(sr, hr), nullptr);
}

double total_loss_value(const Grid& sr, const Grid& hr, const LossWeights& w) {
    validate(w);
    return w.lambda_rec * rec_loss_value(sr, hr) +
           w.lambda_freq * freq_loss_value(sr, hr);
}

int rec_loss(Tape& t, int sr, int hr) { return mean_abs_diff(t, sr, hr); }

int freq_loss(Tape& t, int sr, int hr) {
    return freq_loss_impl(t, sr, hr, nullptr);
}

int freq_loss_weighted(Tape& t, int sr, int hr, const Grid& omega) {
    return freq_loss_impl(t, sr, hr, &omega);
}

int total_loss(Tape& t, int sr, int hr, const LossWeights& w) {
    validate(w);
    const int lr = rec_loss(t, sr, hr);
    const int lf = freq_loss(t, sr, hr);
    return add(t, scale(t, lr, w.lambda_rec), scale(t, lf, w.lambda_freq));
}

double psnr(const Grid& a, const Grid& b, double peak) {
    require_same_shape(a, b, "psnr");
    require(peak > 0.0, "psnr peak must be positive");
    double mse = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        mse += d * d;
    }
    mse /= double(a.v.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "ssim");
    const Shape& s = a.shape;
    require(s.h >= 11 && s.w >= 11,
            "ssim needs images at least 11x11 (window size)");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::vector<double> g = ssim_window();
    const int oh = s.h - 10, ow = s.w - 10;
    const size_t plane = static_cast<size_t>(s.h) * static_cast<size_t>(s.w);
    const size_t oplane = static_cast<size_t>(oh) * static_cast<size_t>(ow);
    std::vector<double> xx(plane), yy(plane), xy(plane);
    std::vector<double> mx, my, sxx, syy, sxy;
    double total = 0.0;
    for (int bi = 0; bi < s.b; ++bi)
        for (int ci = 0; ci < s.c; ++ci) {
            const size_t off = (size_t(bi) * size_t(s.c) + size_t(ci)) * plane;
            const double* pa = a.v.data() + off;
            const double* pb = b.v.data() + off;
            for (size_t i = 0; i < plane; ++i) {
                xx[i] = pa[i] * pa[i];
                yy[i] = pb[i] * pb[i];
                xy[i] = pa[i] * pb[i];
            }
            gauss_valid(pa, s.h, s.w, g, mx);
            gauss_valid(pb, s.h, s.w, g, my);
            gauss_valid(xx.data(), s.h, s.w, g, sxx);
            gauss_valid(yy.data(), s.h, s.w, g, syy);
            gauss_valid(xy.data(), s.h, s.w, g, sxy);
            for (size_t i = 0; i < oplane; ++i) {
                const double vx = sxx[i] - mx[i] * mx[i];
                const double vy = syy[i] - my[i] * my[i];
                const double cov = sxy[i] - mx[i] * my[i];
                const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
                const double den =
                    (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
                total += num / den;
            }
        }
    return total / (double(s.b) * double(s.c) * double(oplane));
}

}  // namespace wmsr
