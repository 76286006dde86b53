#include "wmsr/network.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "wmsr/ops.hpp"
#include "wmsr/wavelet.hpp"

namespace wmsr {
namespace {

const PdcKind kGateKinds[5] = {PdcKind::Vanilla, PdcKind::Cdc, PdcKind::Adc,
                               PdcKind::Hdc, PdcKind::Vdc};

int add_conv(ParamStore& ps, const std::string& prefix, int ci, int co, int k,
             Rng& rng, int& bias_id) {
    Grid w(Shape(co, ci, k, k));
    rng.kaiming_normal(w, ci * k * k);
    const int wid = ps.add(prefix + ".w", std::move(w));
    bias_id = ps.add(prefix + ".b", Grid(Shape(1, co, 1, 1), 0.0));
    return wid;
}

int add_dwconv(ParamStore& ps, const std::string& prefix, int c, Rng& rng,
               int& bias_id) {
    Grid w(Shape(c, 1, 3, 3));
    rng.kaiming_normal(w, 9);
    const int wid = ps.add(prefix + ".w", std::move(w));
    bias_id = ps.add(prefix + ".b", Grid(Shape(1, c, 1, 1), 0.0));
    return wid;
}

int add_linear(ParamStore& ps, const std::string& prefix, int ci, int co,
               Rng& rng, int& bias_id) {
    Grid w(Shape(co, ci, 1, 1));
    rng.xavier_uniform(w, ci, co);
    const int wid = ps.add(prefix + ".w", std::move(w));
    bias_id = ps.add(prefix + ".b", Grid(Shape(1, co, 1, 1), 0.0));
    return wid;
}

void add_layer_norm(ParamStore& ps, const std::string& prefix, int c,
                    int& gamma, int& beta) {
    gamma = ps.add(prefix + ".g", Grid(Shape(1, c, 1, 1), 1.0));
    beta = ps.add(prefix + ".b", Grid(Shape(1, c, 1, 1), 0.0));
}

int P(Tape& t, const ParamStore& ps, int pid) { return t.param(ps, pid); }

void check_wmsr_input(const Grid& x, int scale) {
    require(x.shape.c == 1, "wmsr: input must have one channel, got " +
                                std::to_string(x.shape.c));
    require(x.shape.h >= 8 && x.shape.w >= 8,
            "wmsr: input must be at least 8x8, got " + x.shape.str());
    require(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
            "wmsr: input height and width must be even, got " + x.shape.str());
    (void)scale;
}

template <class F>
Grid on_fresh_tape(const Grid& in, F&& f) {
    Tape t(false);
    const int x = t.leaf(in);
    return t.val(f(t, x));
}

std::int64_t ln_count(int c) { return 2 * std::int64_t(c); }
std::int64_t conv_count(int ci, int co, int k) {
    return std::int64_t(co) * ci * k * k + co;
}
std::int64_t dw_count(int c) { return std::int64_t(c) * 9 + c; }
std::int64_t lin_count(int ci, int co) { return std::int64_t(co) * ci + co; }
std::int64_t ssm_dir_count(int e, int n) {
    return std::int64_t(e) * n * 3 + 2 * std::int64_t(e) +
           std::int64_t(e) * e;
}

}  // namespace

void validate(const ModelConfig& cfg) {
    require(cfg.channels > 0 && cfg.channels % 2 == 0,
            "model config: channels must be positive and even");
    require(cfg.groups > 0, "model config: groups must be positive");
    require(cfg.blocks_per_group > 0,
            "model config: blocks_per_group must be positive");
    require(cfg.scale >= 2 && cfg.scale <= 4,
            "model config: scale must be 2, 3 or 4");
    require(cfg.ssm_state > 0, "model config: ssm_state must be positive");
    require(cfg.vssm_expand >= 1, "model config: vssm_expand must be >= 1");
}

ModelConfig parse_model_config(std::istream& in) {
    ModelConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        require(eq != std::string::npos,
                "model config line " + std::to_string(lineno) +
                    ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "channels") cfg.channels = std::stoi(val);
            else if (key == "groups") cfg.groups = std::stoi(val);
            else if (key == "blocks_per_group") cfg.blocks_per_group = std::stoi(val);
            else if (key == "scale") cfg.scale = std::stoi(val);
            else if (key == "ssm_state") cfg.ssm_state = std::stoi(val);
            else if (key == "vssm_expand") cfg.vssm_expand = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else fail("model config: unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            fail("model config: bad value for '" + key + "': '" + val + "'");
        }
    }
    validate(cfg);
    return cfg;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open model config: " + path);
    return parse_model_config(in);
}

std::string model_config_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "channels=" << cfg.channels << "\n"
       << "groups=" << cfg.groups << "\n"
       << "blocks_per_group=" << cfg.blocks_per_group << "\n"
       << "scale=" << cfg.scale << "\n"
       << "ssm_state=" << cfg.ssm_state << "\n"
       << "vssm_expand=" << cfg.vssm_expand << "\n"
       << "seed=" << cfg.seed << "\n";
    return os.str();
}

GatedFfnParams make_gated_ffn(ParamStore& ps, const std::string& prefix, int c,
                              Rng& rng) {
    require(c % 2 == 0, "gated_ffn: channel count must be even, got " +
                            std::to_string(c));
    GatedFfnParams p{};
    add_layer_norm(ps, prefix + ".ln", c, p.ln_g, p.ln_b);
    p.dw_w = add_dwconv(ps, prefix + ".dw", c, rng, p.dw_b);
    p.out_w = add_linear(ps, prefix + ".out", c / 2, c, rng, p.out_b);
    return p;
}

VssmParams make_vssm(ParamStore& ps, const std::string& prefix,
                     const ModelConfig& cfg, Rng& rng) {
    const int c = cfg.channels, e = cfg.vssm_expand * cfg.channels;
    VssmParams p{};
    p.in1_w = add_linear(ps, prefix + ".in1", c, e, rng, p.in1_b);
    p.dw_w = add_dwconv(ps, prefix + ".dw", e, rng, p.dw_b);
    for (int k = 0; k < 4; ++k)
        p.dirs[k] = make_ssm_dir_params(
            ps, prefix + ".dir" + std::to_string(k), e, cfg.ssm_state, rng);
    add_layer_norm(ps, prefix + ".ln", e, p.ln_g, p.ln_b);
    p.in2_w = add_linear(ps, prefix + ".in2", c, e, rng, p.in2_b);
    p.out_w = add_linear(ps, prefix + ".out", e, c, rng, p.out_b);
    return p;
}

LfssmParams make_lfssm(ParamStore& ps, const std::string& prefix,
                       const ModelConfig& cfg, Rng& rng) {
    LfssmParams p{};
    add_layer_norm(ps, prefix + ".ln", cfg.channels, p.ln_g, p.ln_b);
    p.vssm = make_vssm(ps, prefix + ".vssm", cfg, rng);
    p.ffn = make_gated_ffn(ps, prefix + ".ffn", cfg.channels, rng);
    return p;
}

HfemParams make_hfem(ParamStore& ps, const std::string& prefix, int c,
                     Rng& rng, bool fused) {
    const int c3 = 3 * c;
    HfemParams p{};
    p.lin_l_w = add_linear(ps, prefix + ".linl", c, c3, rng, p.lin_l_b);
    p.dw_w = add_dwconv(ps, prefix + ".dw", c3, rng, p.dw_b);
    p.lin_w_w = add_linear(ps, prefix + ".linw", c3, c3, rng, p.lin_w_b);
    if (fused) {
        Grid w(Shape(c3, 1, 3, 3));
        rng.xavier_uniform(w, 9, 9);
        p.pdc_fused_w = ps.add(prefix + ".pdc.fused", std::move(w));
    } else {
        for (PdcKind kind : kGateKinds) {
            PdcSpec spec = make_pdc_spec(kind);
            Grid w(Shape(c3, 1, 1, spec.taps()));
            rng.xavier_uniform(w, spec.taps(), spec.taps());
            const int wid =
                ps.add(prefix + ".pdc." + pdc_kind_name(kind), std::move(w));
            p.pdc.emplace_back(std::move(spec), wid);
        }
    }
    return p;
}

WamParams make_wam(ParamStore& ps, const std::string& prefix,
                   const ModelConfig& cfg, Rng& rng, bool fused) {
    WamParams p{};
    p.lfssm = make_lfssm(ps, prefix + ".lfssm", cfg, rng);
    p.hfem = make_hfem(ps, prefix + ".hfem", cfg.channels, rng, fused);
    // The band product is quadratic in the residual stream, so random refine
    // weights compound magnitudes across blocks; a zero start makes every
    // block the identity until training opens the branch.
    const int c4 = 4 * cfg.channels;
    p.refine_w = ps.add(prefix + ".refine.w", Grid(Shape(c4, c4, 3, 3), 0.0));
    p.refine_b = ps.add(prefix + ".refine.b", Grid(Shape(1, c4, 1, 1), 0.0));
    return p;
}

WmsrModel build_model(const ModelConfig& cfg, bool fused) {
    validate(cfg);
    WmsrModel m;
    m.cfg = cfg;
    m.fused = fused;
    Rng rng(cfg.seed);
    m.shallow_w = add_conv(m.ps, "shallow", 1, cfg.channels, 3, rng,
                           m.shallow_b);
    for (int g = 0; g < cfg.groups; ++g) {
        GroupParams gp;
        const std::string gp_prefix = "g" + std::to_string(g);
        for (int b = 0; b < cfg.blocks_per_group; ++b)
            gp.blocks.push_back(make_wam(
                m.ps, gp_prefix + ".b" + std::to_string(b), cfg, rng, fused));
        gp.conv_w = add_conv(m.ps, gp_prefix + ".conv", cfg.channels,
                             cfg.channels, 3, rng, gp.conv_b);
        m.groups.push_back(std::move(gp));
    }
    const int r2c = cfg.scale * cfg.scale * cfg.channels;
    m.head_up_w = add_conv(m.ps, "head.up", cfg.channels, r2c, 3, rng,
                           m.head_up_b);
    m.head_out_w = add_conv(m.ps, "head.out", cfg.channels, 1, 3, rng,
                            m.head_out_b);
    m.ps.quantize_to_f32();
    return m;
}

int gated_ffn(Tape& t, const ParamStore& ps, const GatedFfnParams& p, int x) {
    const int c = t.val(x).shape.c;
    const int ln = layer_norm(t, x, P(t, ps, p.ln_g), P(t, ps, p.ln_b));
    const int d = depthwise_conv2d(t, ln, P(t, ps, p.dw_w), P(t, ps, p.dw_b));
    const int z1 = slice_channels(t, d, 0, c / 2);
    const int z2 = slice_channels(t, d, c / 2, c);
    const int gated = mul(t, sigmoid(t, z1), z2);
    return linear(t, gated, P(t, ps, p.out_w), P(t, ps, p.out_b));
}

int vssm(Tape& t, const ParamStore& ps, const VssmParams& p, int x) {
    int b1 = linear(t, x, P(t, ps, p.in1_w), P(t, ps, p.in1_b));
    b1 = depthwise_conv2d(t, b1, P(t, ps, p.dw_w), P(t, ps, p.dw_b));
    b1 = silu(t, b1);
    SsmDirNodes dirs[4];
    for (int k = 0; k < 4; ++k) dirs[k] = ssm_dir_nodes(t, ps, p.dirs[k]);
    b1 = ssm_2d(t, b1, dirs);
    b1 = layer_norm(t, b1, P(t, ps, p.ln_g), P(t, ps, p.ln_b));
    const int b2 =
        silu(t, linear(t, x, P(t, ps, p.in2_w), P(t, ps, p.in2_b)));
    return linear(t, mul(t, b1, b2), P(t, ps, p.out_w), P(t, ps, p.out_b));
}

int lfssm(Tape& t, const ParamStore& ps, const LfssmParams& p, int x) {
    const int ln = layer_norm(t, x, P(t, ps, p.ln_g), P(t, ps, p.ln_b));
    const int z = add(t, vssm(t, ps, p.vssm, ln), x);
    return add(t, gated_ffn(t, ps, p.ffn, z), z);
}

int hfem(Tape& t, const ParamStore& ps, const HfemParams& p, int f_l,
         int f_wh) {
    require(t.val(f_wh).shape.c == 3 * t.val(f_l).shape.c,
            "hfem: high-band stack must have 3x the channels of f_l, got " +
                t.val(f_wh).shape.str() + " vs " + t.val(f_l).shape.str());
    int fl = linear(t, f_l, P(t, ps, p.lin_l_w), P(t, ps, p.lin_l_b));
    fl = depthwise_conv2d(t, fl, P(t, ps, p.dw_w), P(t, ps, p.dw_b));
    const int gate_in =
        linear(t, f_wh, P(t, ps, p.lin_w_w), P(t, ps, p.lin_w_b));
    int pd;
    if (p.pdc_fused_w >= 0) {
        pd = depthwise_conv2d(t, gate_in, P(t, ps, p.pdc_fused_w), -1);
    } else {
        pd = -1;
        for (const auto& [spec, wid] : p.pdc) {
            const int y = pdc_depthwise(t, gate_in, spec, P(t, ps, wid));
            pd = (pd < 0) ? y : add(t, pd, y);
        }
    }
    return mul(t, sigmoid(t, pd), fl);
}

int wam_block(Tape& t, const ParamStore& ps, const WamParams& p, int x) {
    const int c = t.val(x).shape.c;
    const int bands = haar_dwt_stack(t, x);
    const int ll = slice_channels(t, bands, 0, c);
    const int wh = slice_channels(t, bands, c, 4 * c);
    const int f_l = lfssm(t, ps, p.lfssm, ll);
    const int f_h = hfem(t, ps, p.hfem, f_l, wh);
    const int fused_h = mul(t, repeat_channels(t, f_l, 3), f_h);
    const int stack = concat_channels(t, {f_l, fused_h});
    const int ref =
        conv2d(t, stack, P(t, ps, p.refine_w), P(t, ps, p.refine_b), 1, 1);
    return add(t, haar_idwt_stack(t, ref), x);
}

int wmsr_forward(Tape& t, const WmsrModel& m, int x) {
    check_wmsr_input(t.val(x), m.cfg.scale);
    const ParamStore& ps = m.ps;
    const int fs =
        conv2d(t, x, P(t, ps, m.shallow_w), P(t, ps, m.shallow_b), 1, 1);
    int cur = fs;
    for (const GroupParams& g : m.groups) {
        const int gin = cur;
        for (const WamParams& b : g.blocks) cur = wam_block(t, ps, b, cur);
        cur = add(t, conv2d(t, cur, P(t, ps, g.conv_w), P(t, ps, g.conv_b), 1,
                            1),
                  gin);
    }
    const int deep = add(t, cur, fs);
    const int up = conv2d(t, deep, P(t, ps, m.head_up_w),
                          P(t, ps, m.head_up_b), 1, 1);
    const int shuffled = pixel_shuffle(t, up, m.cfg.scale);
    return conv2d(t, shuffled, P(t, ps, m.head_out_w),
                  P(t, ps, m.head_out_b), 1, 1);
}

Grid wmsr_infer(const WmsrModel& m, const Grid& x) {
    check_wmsr_input(x, m.cfg.scale);
    const ParamStore& ps = m.ps;
    Grid fs = on_fresh_tape(x, [&](Tape& t, int in) {
        return conv2d(t, in, P(t, ps, m.shallow_w), P(t, ps, m.shallow_b), 1,
                      1);
    });
    Grid cur = fs;
    for (const GroupParams& g : m.groups) {
        Grid gin = cur;
        for (const WamParams& b : g.blocks)
            cur = on_fresh_tape(
                cur, [&](Tape& t, int in) { return wam_block(t, ps, b, in); });
        Tape t(false);
        cur = t.val(add(t,
                        conv2d(t, t.leaf(cur), P(t, ps, g.conv_w),
                               P(t, ps, g.conv_b), 1, 1),
                        t.leaf(gin)));
    }
    Tape t(false);
    const int deep = add(t, t.leaf(std::move(cur)), t.leaf(std::move(fs)));
    const int up = conv2d(t, deep, P(t, ps, m.head_up_w),
                          P(t, ps, m.head_up_b), 1, 1);
    const int shuffled = pixel_shuffle(t, up, m.cfg.scale);
    return t.val(conv2d(t, shuffled, P(t, ps, m.head_out_w),
                        P(t, ps, m.head_out_b), 1, 1));
}

WmsrModel fuse_model(const WmsrModel& m) {
    require(!m.fused, "fuse_model: model is already fused");
    WmsrModel f = build_model(m.cfg, true);
    // Copy every parameter that exists under the same name; build the fused
    // gate kernels from the multi-branch weights.
    for (const auto& e : m.ps.entries) {
        const int dst = f.ps.find(e.name);
        if (dst >= 0) {
            require(f.ps[dst].value.shape == e.value.shape,
                    "fuse_model: shape mismatch for " + e.name);
            f.ps[dst].value = e.value;
        }
    }
    for (int g = 0; g < m.cfg.groups; ++g)
        for (int b = 0; b < m.cfg.blocks_per_group; ++b) {
            const WamParams& src = m.groups[size_t(g)].blocks[size_t(b)];
            const WamParams& dst = f.groups[size_t(g)].blocks[size_t(b)];
            std::vector<std::pair<PdcSpec, Grid>> branches;
            for (const auto& [spec, wid] : src.hfem.pdc)
                branches.emplace_back(spec, m.ps[wid].value);
            f.ps[dst.hfem.pdc_fused_w].value = fuse_pdc(branches);
        }
    // No float32 rounding here: the fused kernels are exact double sums of
    // the branch kernels, which keeps re-parameterization lossless. They are
    // also stored at full precision in checkpoints.
    return f;
}

std::int64_t analytic_param_count(const ModelConfig& cfg, bool fused) {
    const int c = cfg.channels, e = cfg.vssm_expand * c, n = cfg.ssm_state;
    const std::int64_t vssm_n = lin_count(c, e) + dw_count(e) +
                                4 * ssm_dir_count(e, n) + ln_count(e) +
                                lin_count(c, e) + lin_count(e, c);
    const std::int64_t gffn_n = ln_count(c) + dw_count(c) + lin_count(c / 2, c);
    const std::int64_t lfssm_n = ln_count(c) + vssm_n + gffn_n;
    std::int64_t pdc_n = 0;
    if (fused) {
        pdc_n = std::int64_t(3 * c) * 9;
    } else {
        for (PdcKind kind : kGateKinds)
            pdc_n += std::int64_t(3 * c) * make_pdc_spec(kind).taps();
    }
    const std::int64_t hfem_n = lin_count(c, 3 * c) + dw_count(3 * c) +
                                lin_count(3 * c, 3 * c) + pdc_n;
    const std::int64_t wam_n = lfssm_n + hfem_n + conv_count(4 * c, 4 * c, 3);
    const std::int64_t group_n =
        cfg.blocks_per_group * wam_n + conv_count(c, c, 3);
    return conv_count(1, c, 3) + cfg.groups * group_n +
           conv_count(c, cfg.scale * cfg.scale * c, 3) + conv_count(c, 1, 3);
}

double flops_estimate(const ModelConfig& cfg, int h, int w) {
    const double c = cfg.channels, e = cfg.vssm_expand * c, n = cfg.ssm_state;
    const double hw = double(h) * double(w);
    const double l = hw / 4.0;  // blocks operate on half-resolution bands
    // Multiply-accumulates, x2 for flops; elementwise work is ignored.
    const double vssm_f = (c * e + e * 9 + 2 * (n * e) + e * e +
                           4 * (4 * n * e) + c * e + e * c) *
                          l;
    const double gffn_f = (c * 9 + c / 2 * c) * l;
    const double hfem_f =
        (c * 3 * c + 3 * c * 9 + 3 * c * 3 * c + 5 * (3 * c * 9)) * l;
    const double wam_f = vssm_f + gffn_f + hfem_f + (16 * c * c * 9) * l +
                         8 * c * hw;  // refine conv + dwt/idwt
    const double body_f = cfg.groups * (cfg.blocks_per_group * wam_f +
                                        c * c * 9 * hw);
    const double r2 = double(cfg.scale) * cfg.scale;
    const double head_f = c * r2 * c * 9 * hw + c * 9 * hw * r2;
    return 2.0 * (c * 9 * hw + body_f + head_f);
}

}  // namespace wmsr
