#include "wmsr/sscan.hpp"

#include <cmath>
#include <memory>

#include "wmsr/ops.hpp"

namespace wmsr {

namespace {

// phi(z) = (e^z - 1)/z and its derivative, given e^z. Series below 1e-4.
inline double phi_of(double z, double ez) {
    if (std::abs(z) < 1e-4) return 1.0 + z * (0.5 + z / 6.0);
    return (ez - 1.0) / z;
}

inline double dphi_of(double z, double ez) {
    if (std::abs(z) < 1e-4) return 0.5 + z * (1.0 / 3.0 + z / 8.0);
    return (ez * (z - 1.0) + 1.0) / (z * z);
}

}  // namespace

void discretize(double a, double b, double dt, double& abar, double& bbar) {
    require(dt > 0.0, "discretize: dt must be > 0, got " + std::to_string(dt));
    require(a < 0.0, "discretize: a must be < 0, got " + std::to_string(a));
    const double z = dt * a;
    abar = std::exp(z);
    bbar = phi_of(z, abar) * dt * b;
}

std::vector<int> scan_perm(ScanDir dir, int H, int W) {
    const int L = H * W;
    std::vector<int> p(static_cast<size_t>(L));
    switch (dir) {
        case ScanDir::RowFwd:
            for (int t = 0; t < L; ++t) p[size_t(t)] = t;
            break;
        case ScanDir::RowRev:
            for (int t = 0; t < L; ++t) p[size_t(t)] = L - 1 - t;
            break;
        case ScanDir::ColFwd:
            for (int t = 0; t < L; ++t) p[size_t(t)] = (t % H) * W + t / H;
            break;
        case ScanDir::ColRev:
            for (int t = 0; t < L; ++t)
                p[size_t(t)] = (L - 1 - t) % H * W + (L - 1 - t) / H;
            break;
    }
    return p;
}

std::vector<int> invert_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (size_t t = 0; t < perm.size(); ++t) inv[size_t(perm[t])] = int(t);
    return inv;
}

SsmDirParamIds make_ssm_dir_params(ParamStore& ps, const std::string& prefix,
                                   int C, int N, Rng& rng) {
    require(C >= 1 && N >= 1, "ssm params: C and N must be >= 1");
    SsmDirParamIds ids;
    Grid a_log(Shape(1, C, 1, N));
    for (int c = 0; c < C; ++c)
        for (int n = 0; n < N; ++n)
            a_log.at(0, c, 0, n) = std::log(double(n + 1));
    ids.a_log = ps.add(prefix + ".a_log", std::move(a_log));
    ids.d = ps.add(prefix + ".d", Grid(Shape(1, C, 1, 1), 1.0));
    Grid wb(Shape(N, C, 1, 1)), wc(Shape(N, C, 1, 1)), wdt(Shape(C, C, 1, 1));
    rng.xavier_uniform(wb, C, N);
    rng.xavier_uniform(wc, C, N);
    rng.xavier_uniform(wdt, C, C);
    ids.w_b = ps.add(prefix + ".w_b", std::move(wb));
    ids.w_c = ps.add(prefix + ".w_c", std::move(wc));
    ids.w_dt = ps.add(prefix + ".w_dt", std::move(wdt));
    Grid bdt(Shape(1, C, 1, 1));
    for (double& v : bdt.v) {
        const double dt0 = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = std::log(std::expm1(dt0));  // softplus^-1
    }
    ids.b_dt = ps.add(prefix + ".b_dt", std::move(bdt));
    return ids;
}

SsmDirNodes ssm_dir_nodes(Tape& t, const ParamStore& ps,
                          const SsmDirParamIds& ids) {
    SsmDirNodes n;
    n.a_log = t.param(ps, ids.a_log);
    n.d = t.param(ps, ids.d);
    n.w_b = t.param(ps, ids.w_b);
    n.w_c = t.param(ps, ids.w_c);
    n.w_dt = t.param(ps, ids.w_dt);
    n.b_dt = t.param(ps, ids.b_dt);
    return n;
}

namespace {

// Everything the backward pass replays; one instance per batch sample.
struct ScanSaved {
    std::vector<double> h;     // (L,C,N) state after each step
    std::vector<double> abar;  // (L,C,N)
    std::vector<double> dt;    // (L,C)
    std::vector<double> bt;    // (L,N)
    std::vector<double> ct;    // (L,N)
};

// Sequential selective scan of one contiguous (L,C) sequence.
void scan_seq(const double* x, int L, int C, int N, const double* a,
              const double* dvec, const double* w_b, const double* w_c,
              const double* w_dt, const double* b_dt, double* y,
              ScanSaved* save) {
    std::vector<double> h(size_t(C) * N, 0.0);
    std::vector<double> bt(static_cast<size_t>(N)), ct(static_cast<size_t>(N)), dt(static_cast<size_t>(C));
    if (save) {
        save->h.resize(size_t(L) * C * N);
        save->abar.resize(size_t(L) * C * N);
        save->dt.resize(size_t(L) * C);
        save->bt.resize(size_t(L) * N);
        save->ct.resize(size_t(L) * N);
    }
    for (int t = 0; t < L; ++t) {
        const double* xt = x + std::int64_t(t) * C;
        for (int n = 0; n < N; ++n) {
            double sb = 0.0, sc = 0.0;
            const double* wbn = w_b + std::int64_t(n) * C;
            const double* wcn = w_c + std::int64_t(n) * C;
            for (int c = 0; c < C; ++c) {
                sb += wbn[c] * xt[c];
                sc += wcn[c] * xt[c];
            }
            bt[size_t(n)] = sb;
            ct[size_t(n)] = sc;
        }
        for (int c = 0; c < C; ++c) {
            double s = b_dt[c];
            const double* wrow = w_dt + std::int64_t(c) * C;
            for (int cc = 0; cc < C; ++cc) s += wrow[cc] * xt[cc];
            dt[size_t(c)] = softplus_scalar(s);
        }
        double* yt = y + std::int64_t(t) * C;
        for (int c = 0; c < C; ++c) {
            const double dtc = dt[size_t(c)];
            const double xc = xt[c];
            double* hc = h.data() + std::int64_t(c) * N;
            const double* ac = a + std::int64_t(c) * N;
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const double z = dtc * ac[n];
                const double ez = std::exp(z);
                const double bbar = phi_of(z, ez) * dtc * bt[size_t(n)];
                hc[n] = ez * hc[n] + bbar * xc;
                acc += ct[size_t(n)] * hc[n];
                if (save) {
                    save->abar[(std::int64_t(t) * C + c) * N + n] = ez;
                    save->h[(std::int64_t(t) * C + c) * N + n] = hc[n];
                }
            }
            yt[c] = acc + dvec[c] * xc;
        }
        if (save) {
            for (int c = 0; c < C; ++c)
                save->dt[std::int64_t(t) * C + c] = dt[size_t(c)];
            for (int n = 0; n < N; ++n) {
                save->bt[std::int64_t(t) * N + n] = bt[size_t(n)];
                save->ct[std::int64_t(t) * N + n] = ct[size_t(n)];
            }
        }
    }
}

// Reverse sweep; accumulates into the gradient buffers that are non-null.
void scan_seq_bwd(const double* x, const double* dy, int L, int C, int N,
                  const double* a, const double* dvec, const double* w_b,
                  const double* w_c, const double* w_dt, const ScanSaved& sv,
                  double* dx, double* da_log, double* dd, double* dw_b,
                  double* dw_c, double* dw_dt, double* db_dt) {
    std::vector<double> g(size_t(C) * N, 0.0);  // dL/dh_t carry
    std::vector<double> dxt(static_cast<size_t>(C)), ddt(static_cast<size_t>(C)), ddtpre(static_cast<size_t>(C));
    std::vector<double> dbt(static_cast<size_t>(N)), dct(static_cast<size_t>(N));
    for (int t = L - 1; t >= 0; --t) {
        const double* xt = x + std::int64_t(t) * C;
        const double* dyt = dy + std::int64_t(t) * C;
        const double* ht = sv.h.data() + std::int64_t(t) * C * N;
        const double* hprev = t > 0 ? sv.h.data() + std::int64_t(t - 1) * C * N : nullptr;
        const double* abt = sv.abar.data() + std::int64_t(t) * C * N;
        const double* dtt = sv.dt.data() + std::int64_t(t) * C;
        const double* btt = sv.bt.data() + std::int64_t(t) * N;
        const double* ctt = sv.ct.data() + std::int64_t(t) * N;
        std::fill(dxt.begin(), dxt.end(), 0.0);
        std::fill(ddt.begin(), ddt.end(), 0.0);
        std::fill(dbt.begin(), dbt.end(), 0.0);
        std::fill(dct.begin(), dct.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const double gy = dyt[c];
            const double xc = xt[c];
            const double dtc = dtt[c];
            const double* ac = a + std::int64_t(c) * N;
            double* gc = g.data() + std::int64_t(c) * N;
            if (dd) dd[c] += gy * xc;
            dxt[size_t(c)] += gy * dvec[c];
            double ddt_c = 0.0, dx_c = 0.0;
            for (int n = 0; n < N; ++n) {
                const std::int64_t i = std::int64_t(c) * N + n;
                dct[size_t(n)] += gy * ht[i];
                double gh = gc[n] + gy * ctt[n];  // full dL/dh_t[c,n]
                const double ez = abt[i];
                const double z = dtc * ac[n];
                const double phi = phi_of(z, ez);
                const double bbar = phi * dtc * btt[n];
                const double hp = hprev ? hprev[i] : 0.0;
                const double dabar = gh * hp;
                const double dbbar = gh * xc;
                dx_c += gh * bbar;
                const double dphi = dbbar * dtc * btt[n];
                ddt_c += dbbar * phi * btt[n];
                dbt[size_t(n)] += dbbar * phi * dtc;
                const double dz = dabar * ez + dphi * dphi_of(z, ez);
                ddt_c += dz * ac[n];
                if (da_log) da_log[i] += dz * dtc * ac[n];  // da/da_log = a
                gc[n] = gh * ez;  // carry to h_{t-1}
            }
            dxt[size_t(c)] += dx_c;
            ddt[size_t(c)] = ddt_c;
        }
        // dt = softplus(pre): sigma(pre) = 1 - exp(-dt)
        for (int c = 0; c < C; ++c)
            ddtpre[size_t(c)] = ddt[size_t(c)] * (1.0 - std::exp(-dtt[c]));
        for (int c = 0; c < C; ++c) {
            const double gp = ddtpre[size_t(c)];
            if (gp == 0.0) continue;
            if (db_dt) db_dt[c] += gp;
            const double* wrow = w_dt + std::int64_t(c) * C;
            double* dwrow = dw_dt ? dw_dt + std::int64_t(c) * C : nullptr;
            for (int cc = 0; cc < C; ++cc) {
                if (dwrow) dwrow[cc] += gp * xt[cc];
                dxt[size_t(cc)] += gp * wrow[cc];
            }
        }
        for (int n = 0; n < N; ++n) {
            const double gb = dbt[size_t(n)], gcn = dct[size_t(n)];
            const double* wbn = w_b + std::int64_t(n) * C;
            const double* wcn = w_c + std::int64_t(n) * C;
            double* dwbn = dw_b ? dw_b + std::int64_t(n) * C : nullptr;
            double* dwcn = dw_c ? dw_c + std::int64_t(n) * C : nullptr;
            for (int c = 0; c < C; ++c) {
                if (dwbn) dwbn[c] += gb * xt[c];
                if (dwcn) dwcn[c] += gcn * xt[c];
                dxt[size_t(c)] += gb * wbn[c] + gcn * wcn[c];
            }
        }
        if (dx) {
            double* dxrow = dx + std::int64_t(t) * C;
            for (int c = 0; c < C; ++c) dxrow[c] += dxt[size_t(c)];
        }
    }
}

void check_ssm_shapes(int C, const Grid& a_log, const Grid& d, const Grid& w_b,
                      const Grid& w_c, const Grid& w_dt, const Grid& b_dt) {
    require(a_log.shape.b == 1 && a_log.shape.c == C && a_log.shape.h == 1,
            "ssm: a_log must be (1,C,1,N), got " + a_log.shape.str());
    const int N = a_log.shape.w;
    require(d.numel() == C, "ssm: d must have C entries");
    require(w_b.shape == Shape(N, C, 1, 1), "ssm: w_b must be (N,C,1,1), got " +
                                                w_b.shape.str());
    require(w_c.shape == Shape(N, C, 1, 1), "ssm: w_c must be (N,C,1,1), got " +
                                                w_c.shape.str());
    require(w_dt.shape == Shape(C, C, 1, 1),
            "ssm: w_dt must be (C,C,1,1), got " + w_dt.shape.str());
    require(b_dt.numel() == C, "ssm: b_dt must have C entries");
}

std::vector<double> neg_exp(const Grid& a_log) {
    std::vector<double> a(a_log.v.size());
    for (size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log.v[i]);
    return a;
}

}  // namespace

Grid selective_scan_1d_fwd(const Grid& xseq, const Grid& a_log, const Grid& d,
                           const Grid& w_b, const Grid& w_c, const Grid& w_dt,
                           const Grid& b_dt) {
    require(xseq.shape.b == 1 && xseq.shape.c == 1,
            "selective_scan_1d: x must be (1,1,L,C), got " + xseq.shape.str());
    const int L = xseq.shape.h, C = xseq.shape.w;
    check_ssm_shapes(C, a_log, d, w_b, w_c, w_dt, b_dt);
    const int N = a_log.shape.w;
    const std::vector<double> a = neg_exp(a_log);
    Grid y(xseq.shape);
    if (L == 0) return y;
    scan_seq(xseq.data(), L, C, N, a.data(), d.data(), w_b.data(), w_c.data(),
             w_dt.data(), b_dt.data(), y.data(), nullptr);
    return y;
}

Grid frozen_scan_1d(const Grid& xseq, const Grid& abar, const Grid& bbar,
                    const Grid& cvec, const Grid& dvec) {
    require(xseq.shape.b == 1 && xseq.shape.c == 1,
            "frozen_scan_1d: x must be (1,1,L,C), got " + xseq.shape.str());
    const int L = xseq.shape.h, C = xseq.shape.w;
    require(abar.shape.c == C && abar.shape.h == 1,
            "frozen_scan_1d: abar must be (1,C,1,N)");
    const int N = abar.shape.w;
    require_same_shape(abar, bbar, "frozen_scan_1d");
    require(cvec.numel() == N, "frozen_scan_1d: cvec must have N entries");
    require(dvec.numel() == C, "frozen_scan_1d: dvec must have C entries");
    Grid y(xseq.shape);
    std::vector<double> h(size_t(C) * N, 0.0);
    for (int t = 0; t < L; ++t) {
        for (int c = 0; c < C; ++c) {
            const double xc = xseq.at(0, 0, t, c);
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                double& hc = h[size_t(c) * N + size_t(n)];
                hc = abar.at(0, c, 0, n) * hc + bbar.at(0, c, 0, n) * xc;
                acc += cvec.v[size_t(n)] * hc;
            }
            y.at(0, 0, t, c) = acc + dvec.v[size_t(c)] * xc;
        }
    }
    return y;
}

int ssm_dir(Tape& t, int x, const SsmDirNodes& p, ScanDir dir) {
    const Grid& xg = t.val(x);
    const int B = xg.shape.b, C = xg.shape.c, H = xg.shape.h, W = xg.shape.w;
    const int L = H * W;
    check_ssm_shapes(C, t.val(p.a_log), t.val(p.d), t.val(p.w_b), t.val(p.w_c),
                     t.val(p.w_dt), t.val(p.b_dt));
    const int N = t.val(p.a_log).shape.w;
    const std::vector<int> perm = scan_perm(dir, H, W);

    auto xv = t.val_ptr(x);
    auto alogv = t.val_ptr(p.a_log);
    auto dv = t.val_ptr(p.d);
    auto wbv = t.val_ptr(p.w_b);
    auto wcv = t.val_ptr(p.w_c);
    auto wdtv = t.val_ptr(p.w_dt);

    const std::vector<double> a = neg_exp(*alogv);
    const bool rg = t.grad_enabled() &&
                    (t.wants_grad(x) || t.wants_grad(p.a_log) ||
                     t.wants_grad(p.d) || t.wants_grad(p.w_b) ||
                     t.wants_grad(p.w_c) || t.wants_grad(p.w_dt) ||
                     t.wants_grad(p.b_dt));

    auto saves = std::make_shared<std::vector<ScanSaved>>();
    if (rg) saves->resize(static_cast<size_t>(B));

    Grid y(xg.shape);
    std::vector<double> xseq(size_t(L) * C), yseq(size_t(L) * C);
    for (int b = 0; b < B; ++b) {
        const double* xb = xg.data() + xg.idx(b, 0, 0, 0);
        for (int tt = 0; tt < L; ++tt)
            for (int c = 0; c < C; ++c)
                xseq[size_t(tt) * C + size_t(c)] = xb[std::int64_t(c) * L + perm[size_t(tt)]];
        scan_seq(xseq.data(), L, C, N, a.data(), dv->data(), wbv->data(),
                 wcv->data(), wdtv->data(), t.val(p.b_dt).data(), yseq.data(),
                 rg ? &(*saves)[size_t(b)] : nullptr);
        double* yb = y.data() + y.idx(b, 0, 0, 0);
        for (int tt = 0; tt < L; ++tt)
            for (int c = 0; c < C; ++c)
                yb[std::int64_t(c) * L + perm[size_t(tt)]] = yseq[size_t(tt) * C + size_t(c)];
    }

    const SsmDirNodes pn = p;
    const int id = t.op(std::move(y), {x, p.a_log, p.d, p.w_b, p.w_c, p.w_dt, p.b_dt},
                        nullptr);
    Tape::Node& node = t.node(id);
    if (!node.requires_grad) return id;
    node.backward = [=](Tape& tt) {
        const Grid& dy = tt.node(id).grad;
        const bool gx = tt.wants_grad(x);
        Grid* dxg = gx ? &tt.grad_accum(x) : nullptr;
        auto acc = [&tt](int nid, bool want) -> double* {
            return want ? tt.grad_accum(nid).data() : nullptr;
        };
        double* dalog = acc(pn.a_log, tt.wants_grad(pn.a_log));
        double* dd = acc(pn.d, tt.wants_grad(pn.d));
        double* dwb = acc(pn.w_b, tt.wants_grad(pn.w_b));
        double* dwc = acc(pn.w_c, tt.wants_grad(pn.w_c));
        double* dwdt = acc(pn.w_dt, tt.wants_grad(pn.w_dt));
        double* dbdt = acc(pn.b_dt, tt.wants_grad(pn.b_dt));
        std::vector<double> dyseq(size_t(L) * C), xseq2(size_t(L) * C), dxseq;
        for (int b = 0; b < B; ++b) {
            const double* dyb = dy.data() + dy.idx(b, 0, 0, 0);
            const double* xb = xv->data() + xv->idx(b, 0, 0, 0);
            for (int s = 0; s < L; ++s)
                for (int c = 0; c < C; ++c) {
                    dyseq[size_t(s) * C + size_t(c)] =
                        dyb[std::int64_t(c) * L + perm[size_t(s)]];
                    xseq2[size_t(s) * C + size_t(c)] =
                        xb[std::int64_t(c) * L + perm[size_t(s)]];
                }
            if (gx) dxseq.assign(size_t(L) * C, 0.0);
            scan_seq_bwd(xseq2.data(), dyseq.data(), L, C, N, a.data(),
                         dv->data(), wbv->data(), wcv->data(), wdtv->data(),
                         (*saves)[size_t(b)], gx ? dxseq.data() : nullptr,
                         dalog, dd, dwb, dwc, dwdt, dbdt);
            if (gx) {
                double* dxb = dxg->data() + dxg->idx(b, 0, 0, 0);
                for (int s = 0; s < L; ++s)
                    for (int c = 0; c < C; ++c)
                        dxb[std::int64_t(c) * L + perm[size_t(s)]] +=
                            dxseq[size_t(s) * C + size_t(c)];
            }
        }
    };
    return id;
}

int ssm_2d(Tape& t, int x, const SsmDirNodes dirs[4]) {
    const int y0 = ssm_dir(t, x, dirs[0], ScanDir::RowFwd);
    const int y1 = ssm_dir(t, x, dirs[1], ScanDir::RowRev);
    const int y2 = ssm_dir(t, x, dirs[2], ScanDir::ColFwd);
    const int y3 = ssm_dir(t, x, dirs[3], ScanDir::ColRev);
    return scale(t, add(t, add(t, y0, y1), add(t, y2, y3)), 0.25);
}

}  // namespace wmsr
