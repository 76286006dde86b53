#pragma once

#include "wmsr/grid.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

struct LossWeights {
    double lambda_rec = 0.1;
    double lambda_freq = 0.9;
};

void validate(const LossWeights& w);

// 2D DFT with 1/(HW) normalization, so F(0,0) is the spatial mean.
// Computed separably (width axis then height axis).
struct Spectrum {
    Grid re, im;
};

Spectrum dft2(const Grid& x);

// ---- plain scalar evaluations ----
double rec_loss_value(const Grid& sr, const Grid& hr);
// mean over (b,c,u,v) of w * |F_hr - F_sr|^2 with w = |F_hr - F_sr|.
double freq_loss_value(const Grid& sr, const Grid& hr);
double total_loss_value(const Grid& sr, const Grid& hr, const LossWeights& w);

// ---- tape ops ----
int rec_loss(Tape& t, int sr, int hr);
// The spectral weight is recomputed from the current values and held constant
// during differentiation (focal-frequency convention).
int freq_loss(Tape& t, int sr, int hr);
// Same loss with an explicit fixed weight grid (B,C,H,W); lets tests
// finite-difference a truly constant-omega objective.
int freq_loss_weighted(Tape& t, int sr, int hr, const Grid& omega);
int total_loss(Tape& t, int sr, int hr, const LossWeights& w);

// ---- metrics ----
// 10*log10(peak^2 / MSE), capped at 100 dB (exactly 100 when MSE = 0).
double psnr(const Grid& a, const Grid& b, double peak = 1.0);
// Mean SSIM over valid 11x11 windows, Gaussian sigma 1.5, K1=0.01, K2=0.03,
// peak 1.0. Inputs smaller than the window are rejected.
double ssim(const Grid& a, const Grid& b);

}  // namespace wmsr
