#pragma once

#include <vector>

#include "wmsr/grid.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

// ---- plain forward kernels (no tape) ----
// Shapes follow the (batch, channel, height, width) layout everywhere.
// Weights reuse the rank-4 container: conv kernels are (outC, inC, kh, kw),
// linear weights (Cout, Cin, 1, 1), per-channel vectors (1, C, 1, 1).

Grid conv2d_fwd(const Grid& x, const Grid& k, const Grid* bias, int stride,
                int pad);
Grid depthwise_conv2d_fwd(const Grid& x, const Grid& k, const Grid* bias,
                          int pad = 1);
Grid linear_fwd(const Grid& x, const Grid& w, const Grid* bias);
Grid layer_norm_fwd(const Grid& x, const Grid& gamma, const Grid& beta,
                    double eps = 1e-6);
Grid silu_fwd(const Grid& x);
Grid sigmoid_fwd(const Grid& x);
Grid pixel_shuffle_fwd(const Grid& x, int r);
Grid pixel_unshuffle_fwd(const Grid& x, int r);

double sigmoid_scalar(double x);
double softplus_scalar(double x);

// Building blocks for modules that wire their own linear ops.
Grid conv2d_bwd_x(const Grid& dy, const Grid& k, const Shape& xs, int stride,
                  int pad);
void conv2d_bwd_k_acc(const Grid& dy, const Grid& x, const Shape& ks,
                      int stride, int pad, Grid& dk);

// ---- tape ops ----
// Each returns the node id of the result. Pass -1 for an absent bias.

int conv2d(Tape& t, int x, int k, int bias, int stride, int pad);
int depthwise_conv2d(Tape& t, int x, int k, int bias, int pad = 1);
int linear(Tape& t, int x, int w, int bias);
int layer_norm(Tape& t, int x, int gamma, int beta, double eps = 1e-6);
int silu(Tape& t, int x);
int sigmoid(Tape& t, int x);
int pixel_shuffle(Tape& t, int x, int r);
int pixel_unshuffle(Tape& t, int x, int r);

int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int mul(Tape& t, int a, int b);
int scale(Tape& t, int a, double s);
int concat_channels(Tape& t, const std::vector<int>& xs);
int slice_channels(Tape& t, int x, int c0, int c1);
int repeat_channels(Tape& t, int x, int times);

int sum_all(Tape& t, int x);
int mean_all(Tape& t, int x);
// mean |a - b| over all elements; the L1 reconstruction loss core.
int mean_abs_diff(Tape& t, int a, int b);

}  // namespace wmsr
