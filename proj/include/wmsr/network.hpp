#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "wmsr/grid.hpp"
#include "wmsr/pdconv.hpp"
#include "wmsr/rng.hpp"
#include "wmsr/sscan.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

struct ModelConfig {
    int channels = 64;
    int groups = 6;
    int blocks_per_group = 4;
    int scale = 2;
    int ssm_state = 16;
    int vssm_expand = 2;
    std::uint64_t seed = 0;
};

void validate(const ModelConfig& cfg);

// Plain key=value text, one field per line; '#' comments and blank lines are
// ignored. Unknown keys are rejected. See README for the field list.
ModelConfig parse_model_config(std::istream& in);
ModelConfig load_model_config(const std::string& path);
std::string model_config_text(const ModelConfig& cfg);

// ---- block parameter handles (ids into a ParamStore) ----

// layer_norm -> depthwise 3x3 -> split halves -> sigmoid(z1) * z2 ->
// linear C/2 -> C.
struct GatedFfnParams {
    int ln_g, ln_b, dw_w, dw_b, out_w, out_b;
};

// Branch 1: expand -> depthwise 3x3 -> SiLU -> 2D selective scan -> LN.
// Branch 2: expand -> SiLU. Product, then reduce back to C.
struct VssmParams {
    int in1_w, in1_b, dw_w, dw_b;
    SsmDirParamIds dirs[4];
    int ln_g, ln_b;
    int in2_w, in2_b, out_w, out_b;
};

// z = vssm(layer_norm(x)) + x; out = gated_ffn(z) + z.
struct LfssmParams {
    int ln_g, ln_b;
    VssmParams vssm;
    GatedFfnParams ffn;
};

// Gated high-frequency branch: sigmoid(PDConv(linear(f_wh))) elementwise with
// depthwise_conv(linear(f_l)). The PDConv unit is five parallel depthwise
// difference branches while training; fused models carry one plain depthwise
// 3x3 kernel instead.
struct HfemParams {
    int lin_l_w, lin_l_b, dw_w, dw_b, lin_w_w, lin_w_b;
    std::vector<std::pair<PdcSpec, int>> pdc;  // multi-branch weights
    int pdc_fused_w = -1;                      // set when fused
};

// DWT -> (LL -> lfssm, high bands -> hfem) -> band-replicated product ->
// 3x3 refinement over the 4C band stack -> IDWT -> input residual.
struct WamParams {
    LfssmParams lfssm;
    HfemParams hfem;
    int refine_w, refine_b;
};

struct GroupParams {
    std::vector<WamParams> blocks;
    int conv_w, conv_b;
};

struct WmsrModel {
    ModelConfig cfg;
    bool fused = false;
    ParamStore ps;
    int shallow_w = -1, shallow_b = -1;
    std::vector<GroupParams> groups;
    int head_up_w = -1, head_up_b = -1, head_out_w = -1, head_out_b = -1;
};

// Builders register parameters (deterministically, from cfg.seed) and return
// the id bundles. Values are rounded through float32 after init so that
// checkpoint save/load is bit-exact.
GatedFfnParams make_gated_ffn(ParamStore& ps, const std::string& prefix, int c,
                              Rng& rng);
VssmParams make_vssm(ParamStore& ps, const std::string& prefix,
                     const ModelConfig& cfg, Rng& rng);
LfssmParams make_lfssm(ParamStore& ps, const std::string& prefix,
                       const ModelConfig& cfg, Rng& rng);
HfemParams make_hfem(ParamStore& ps, const std::string& prefix, int c,
                     Rng& rng, bool fused);
WamParams make_wam(ParamStore& ps, const std::string& prefix,
                   const ModelConfig& cfg, Rng& rng, bool fused);
WmsrModel build_model(const ModelConfig& cfg, bool fused = false);

// ---- forwards (tape ids in, tape id out) ----
int gated_ffn(Tape& t, const ParamStore& ps, const GatedFfnParams& p, int x);
int vssm(Tape& t, const ParamStore& ps, const VssmParams& p, int x);
int lfssm(Tape& t, const ParamStore& ps, const LfssmParams& p, int x);
int hfem(Tape& t, const ParamStore& ps, const HfemParams& p, int f_l, int f_wh);
int wam_block(Tape& t, const ParamStore& ps, const WamParams& p, int x);
int wmsr_forward(Tape& t, const WmsrModel& m, int x);

// No-grad forward that runs one block per throwaway tape, so peak memory is a
// single block's activations. Bit-identical to wmsr_forward.
Grid wmsr_infer(const WmsrModel& m, const Grid& x);

// Copies a trained multi-branch model into fused form: the five difference
// branches of every gate collapse into one plain depthwise kernel. Forward
// outputs agree with the source model up to rounding.
WmsrModel fuse_model(const WmsrModel& m);

// Closed-form parameter count for a config; tests pin the runtime store total
// to this exactly.
std::int64_t analytic_param_count(const ModelConfig& cfg, bool fused = false);

// Rough multiply-accumulate estimate (x2 for flops) of one forward pass on an
// (h, w) input; a reporting diagnostic, not a contract.
double flops_estimate(const ModelConfig& cfg, int h, int w);

}  // namespace wmsr
