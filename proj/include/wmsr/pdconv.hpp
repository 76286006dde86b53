#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wmsr/grid.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

// Pixel-difference convolution family over a 3x3 receptive field. Each tap t
// contributes w[t] * (x(p0 + pa[t]) - x(p0 + pb[t])); a plain (vanilla) tap
// has no reference position (pb = -1). Positions are flat 3x3 indices
// q = (di+1)*3 + (dj+1), center = 4.
enum class PdcKind { Vanilla, Cdc, Adc, Hdc, Vdc };

const char* pdc_kind_name(PdcKind k);

struct PdcSpec {
    PdcKind kind = PdcKind::Vanilla;
    std::vector<int> pa, pb;
    int taps() const { return int(pa.size()); }
};

// Canonical tap-pair sets:
//   Vanilla: 9 taps, pb absent.
//   CDC: 9 taps, pb = center (the center tap cancels itself).
//   ADC: the 8-ring clockwise from (-1,-1); pb = next position clockwise.
//   HDC: the 6 taps with dj in {0,+1}; pb = one column to the left.
//   VDC: the 6 taps with di in {0,+1}; pb = one row up.
PdcSpec make_pdc_spec(PdcKind kind);

void validate_pdc_spec(const PdcSpec& spec);

// Rearranges tap weights w (outC, inC, 1, taps) into the equivalent plain
// 3x3 kernel: k[q] = sum_{pa=q} w - sum_{pb=q} w. For any PDC kind the
// result sums to zero over the 3x3 window (constants are annihilated).
Grid pdc_equivalent_kernel(const PdcSpec& spec, const Grid& w);

// Difference convolution, zero padding, stride 1, no bias.
Grid pdc_forward_fwd(const Grid& x, const PdcSpec& spec, const Grid& w);
int pdc_forward(Tape& t, int x, const PdcSpec& spec, int w);

// Per-channel (depthwise) variant; w is (C, 1, 1, taps) for a (B,C,H,W) input.
Grid pdc_depthwise_fwd(const Grid& x, const PdcSpec& spec, const Grid& w);
int pdc_depthwise(Tape& t, int x, const PdcSpec& spec, int w);

// Sums the equivalent kernels of parallel branches into one plain 3x3 kernel;
// branch weights are (outC, inC, 1, taps) per the branch's spec.
Grid fuse_pdc(const std::vector<std::pair<PdcSpec, Grid>>& branches);

}  // namespace wmsr
