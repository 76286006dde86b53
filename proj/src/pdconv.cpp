#include "wmsr/pdconv.hpp"

#include "wmsr/ops.hpp"

namespace wmsr {

namespace {

constexpr int kq(int di, int dj) { return (di + 1) * 3 + (dj + 1); }

}  // namespace

const char* pdc_kind_name(PdcKind k) {
    switch (k) {
        case PdcKind::Vanilla: return "vanilla";
        case PdcKind::Cdc: return "cdc";
        case PdcKind::Adc: return "adc";
        case PdcKind::Hdc: return "hdc";
        case PdcKind::Vdc: return "vdc";
    }
    return "?";
}

PdcSpec make_pdc_spec(PdcKind kind) {
    PdcSpec s;
    s.kind = kind;
    switch (kind) {
        case PdcKind::Vanilla:
            for (int q = 0; q < 9; ++q) {
                s.pa.push_back(q);
                s.pb.push_back(-1);
            }
            break;
        case PdcKind::Cdc:
            for (int q = 0; q < 9; ++q) {
                s.pa.push_back(q);
                s.pb.push_back(kq(0, 0));
            }
            break;
        case PdcKind::Adc: {
            static const int ring[8] = {kq(-1, -1), kq(-1, 0), kq(-1, 1),
                                        kq(0, 1),   kq(1, 1),  kq(1, 0),
                                        kq(1, -1),  kq(0, -1)};
            for (int i = 0; i < 8; ++i) {
                s.pa.push_back(ring[i]);
                s.pb.push_back(ring[(i + 1) % 8]);
            }
            break;
        }
        case PdcKind::Hdc:
            for (int di = -1; di <= 1; ++di)
                for (int dj = 0; dj <= 1; ++dj) {
                    s.pa.push_back(kq(di, dj));
                    s.pb.push_back(kq(di, dj - 1));
                }
            break;
        case PdcKind::Vdc:
            for (int di = 0; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    s.pa.push_back(kq(di, dj));
                    s.pb.push_back(kq(di - 1, dj));
                }
            break;
    }
    return s;
}

void validate_pdc_spec(const PdcSpec& spec) {
    require(spec.pa.size() == spec.pb.size(),
            "PdcSpec: pa/pb length mismatch");
    require(!spec.pa.empty(), "PdcSpec: no taps");
    for (int q : spec.pa)
        require(q >= 0 && q < 9,
                "PdcSpec: tap position " + std::to_string(q) +
                    " outside the 3x3 receptive field");
    const bool vanilla = spec.kind == PdcKind::Vanilla;
    for (int q : spec.pb) {
        if (vanilla)
            require(q == -1, "PdcSpec: vanilla taps cannot have a reference");
        else
            require(q >= 0 && q < 9,
                    "PdcSpec: reference position " + std::to_string(q) +
                        " outside the 3x3 receptive field");
    }
}

Grid pdc_equivalent_kernel(const PdcSpec& spec, const Grid& w) {
    validate_pdc_spec(spec);
    require(w.shape.h == 1 && w.shape.w == spec.taps(),
            "pdc: weights must be (outC,inC,1," + std::to_string(spec.taps()) +
                ") for kind " + pdc_kind_name(spec.kind) + ", got " +
                w.shape.str());
    const int outC = w.shape.b, inC = w.shape.c, T = spec.taps();
    Grid k(Shape(outC, inC, 3, 3), 0.0);
    for (int oc = 0; oc < outC; ++oc)
        for (int ic = 0; ic < inC; ++ic)
            for (int t = 0; t < T; ++t) {
                const double wv = w.at(oc, ic, 0, t);
                k.v[size_t(k.idx(oc, ic, 0, 0) + spec.pa[size_t(t)])] += wv;
                if (spec.pb[size_t(t)] >= 0)
                    k.v[size_t(k.idx(oc, ic, 0, 0) + spec.pb[size_t(t)])] -= wv;
            }
    return k;
}

Grid pdc_forward_fwd(const Grid& x, const PdcSpec& spec, const Grid& w) {
    return conv2d_fwd(x, pdc_equivalent_kernel(spec, w), nullptr, 1, 1);
}

int pdc_forward(Tape& t, int x, const PdcSpec& spec, int w) {
    Grid k = pdc_equivalent_kernel(spec, t.val(w));
    Grid y = conv2d_fwd(t.val(x), k, nullptr, 1, 1);
    const int id = t.op(std::move(y), {x, w}, nullptr);
    Tape::Node& n = t.node(id);
    if (!n.requires_grad) return id;
    auto xv = t.val_ptr(x);
    auto kcopy = std::make_shared<Grid>(std::move(k));
    const PdcSpec sp = spec;
    n.backward = [=](Tape& tt) {
        const Grid& dy = tt.node(id).grad;
        if (tt.wants_grad(x)) {
            Grid dx = conv2d_bwd_x(dy, *kcopy, xv->shape, 1, 1);
            Grid& acc = tt.grad_accum(x);
            for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += dx.v[i];
        }
        if (tt.wants_grad(w)) {
            Grid dk(kcopy->shape, 0.0);
            conv2d_bwd_k_acc(dy, *xv, kcopy->shape, 1, 1, dk);
            Grid& dw = tt.grad_accum(w);
            const int outC = dw.shape.b, inC = dw.shape.c, T = int(sp.pa.size());
            for (int oc = 0; oc < outC; ++oc)
                for (int ic = 0; ic < inC; ++ic)
                    for (int tap = 0; tap < T; ++tap) {
                        double g = dk.v[size_t(dk.idx(oc, ic, 0, 0) +
                                               sp.pa[size_t(tap)])];
                        if (sp.pb[size_t(tap)] >= 0)
                            g -= dk.v[size_t(dk.idx(oc, ic, 0, 0) +
                                             sp.pb[size_t(tap)])];
                        dw.at(oc, ic, 0, tap) += g;
                    }
        }
    };
    return id;
}

Grid pdc_depthwise_fwd(const Grid& x, const PdcSpec& spec, const Grid& w) {
    Grid k = pdc_equivalent_kernel(spec, w);
    require(k.shape.c == 1 && k.shape.b == x.shape.c,
            "pdc_depthwise: weight channels " + std::to_string(k.shape.b) +
                " do not match input channels " + std::to_string(x.shape.c));
    return depthwise_conv2d_fwd(x, k, nullptr, 1);
}

int pdc_depthwise(Tape& t, int x, const PdcSpec& spec, int w) {
    Grid k = pdc_equivalent_kernel(spec, t.val(w));
    require(k.shape.c == 1 && k.shape.b == t.val(x).shape.c,
            "pdc_depthwise: weight channels " + std::to_string(k.shape.b) +
                " do not match input channels " +
                std::to_string(t.val(x).shape.c));
    Grid y = depthwise_conv2d_fwd(t.val(x), k, nullptr, 1);
    const int id = t.op(std::move(y), {x, w}, nullptr);
    Tape::Node& n = t.node(id);
    if (!n.requires_grad) return id;
    auto xv = t.val_ptr(x);
    auto kcopy = std::make_shared<Grid>(std::move(k));
    const PdcSpec sp = spec;
    n.backward = [=](Tape& tt) {
        const Grid& dy = tt.node(id).grad;
        const int B = xv->shape.b, C = xv->shape.c;
        const int H = xv->shape.h, W = xv->shape.w;
        if (tt.wants_grad(x)) {
            Grid kflip(kcopy->shape);
            for (int c = 0; c < C; ++c)
                for (int p = 0; p < 3; ++p)
                    for (int q = 0; q < 3; ++q)
                        kflip.at(c, 0, p, q) = kcopy->at(c, 0, 2 - p, 2 - q);
            Grid dx = depthwise_conv2d_fwd(dy, kflip, nullptr, 1);
            Grid& acc = tt.grad_accum(x);
            for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += dx.v[i];
        }
        if (tt.wants_grad(w)) {
            Grid dk(kcopy->shape, 0.0);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < H; ++i)
                        for (int j = 0; j < W; ++j) {
                            const double g = dy.at(b, c, i, j);
                            if (g == 0.0) continue;
                            for (int p = 0; p < 3; ++p)
                                for (int q = 0; q < 3; ++q) {
                                    const int ii = i + p - 1, jj = j + q - 1;
                                    if (ii < 0 || ii >= H || jj < 0 || jj >= W)
                                        continue;
                                    dk.at(c, 0, p, q) += g * xv->at(b, c, ii, jj);
                                }
                        }
            Grid& dw = tt.grad_accum(w);
            const int T = int(sp.pa.size());
            for (int c = 0; c < C; ++c)
                for (int tap = 0; tap < T; ++tap) {
                    double g = dk.v[size_t(dk.idx(c, 0, 0, 0) +
                                           sp.pa[size_t(tap)])];
                    if (sp.pb[size_t(tap)] >= 0)
                        g -= dk.v[size_t(dk.idx(c, 0, 0, 0) +
                                         sp.pb[size_t(tap)])];
                    dw.at(c, 0, 0, tap) += g;
                }
        }
    };
    return id;
}

Grid fuse_pdc(const std::vector<std::pair<PdcSpec, Grid>>& branches) {
    require(!branches.empty(), "fuse_pdc: no branches");
    Grid fused = pdc_equivalent_kernel(branches[0].first, branches[0].second);
    for (size_t i = 1; i < branches.size(); ++i) {
        Grid k = pdc_equivalent_kernel(branches[i].first, branches[i].second);
        require(k.shape == fused.shape,
                "fuse_pdc: branch channel dims differ, " + fused.shape.str() +
                    " vs " + k.shape.str());
        for (size_t j = 0; j < fused.v.size(); ++j) fused.v[j] += k.v[j];
    }
    return fused;
}

}  // namespace wmsr
