#pragma once

#include <string>
#include <vector>

#include "wmsr/grid.hpp"
#include "wmsr/rng.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

// Zero-order-hold discretization of a scalar diagonal state:
//   abar = exp(dt*a),  bbar = (dt*a)^-1 (exp(dt*a) - 1) * dt*b,
// with the series 1 + z/2 + z^2/6 replacing (e^z-1)/z for |z| < 1e-4.
void discretize(double a, double b, double dt, double& abar, double& bbar);

enum class ScanDir { RowFwd = 0, RowRev = 1, ColFwd = 2, ColRev = 3 };

// perm[t] = flat (h*W + w) position visited at step t.
std::vector<int> scan_perm(ScanDir dir, int H, int W);
std::vector<int> invert_perm(const std::vector<int>& perm);

// Per-direction parameters, as ParamStore ids. Shapes:
//   a_log (1,C,1,N)  A = -exp(a_log), diagonal
//   d     (1,C,1,1)  residual gain
//   w_b   (N,C,1,1)  B_t = W_B x_t
//   w_c   (N,C,1,1)  C_t = W_C x_t
//   w_dt  (C,C,1,1), b_dt (1,C,1,1)   dt_t = softplus(W_dt x_t + b_dt)
struct SsmDirParamIds {
    int a_log = -1, d = -1, w_b = -1, w_c = -1, w_dt = -1, b_dt = -1;
};

// a_log = log(1..N); d = 1; projections Xavier; b_dt set so that the initial
// timestep softplus(b_dt) lands log-uniformly in [1e-3, 1e-1].
SsmDirParamIds make_ssm_dir_params(ParamStore& ps, const std::string& prefix,
                                   int C, int N, Rng& rng);

// Same six handles as tape node ids.
struct SsmDirNodes {
    int a_log = -1, d = -1, w_b = -1, w_c = -1, w_dt = -1, b_dt = -1;
};

SsmDirNodes ssm_dir_nodes(Tape& t, const ParamStore& ps,
                          const SsmDirParamIds& ids);

// Selective scan along one sequence; x and y are (1,1,L,C).
// Reference semantics for the fused 2D op below.
Grid selective_scan_1d_fwd(const Grid& xseq, const Grid& a_log, const Grid& d,
                           const Grid& w_b, const Grid& w_c, const Grid& w_dt,
                           const Grid& b_dt);

// Recurrence with the selectivity removed: fixed abar/bbar (1,C,1,N),
// cvec (1,1,1,N), dvec (1,C,1,1). Linear in x; used by linearity tests.
Grid frozen_scan_1d(const Grid& xseq, const Grid& abar, const Grid& bbar,
                    const Grid& cvec, const Grid& dvec);

// One scan direction over a (B,C,H,W) grid, differentiable.
int ssm_dir(Tape& t, int x, const SsmDirNodes& p, ScanDir dir);

// Arithmetic mean of the four directional scans (row-fwd, row-rev, col-fwd,
// col-rev), each with its own parameters.
int ssm_2d(Tape& t, int x, const SsmDirNodes dirs[4]);

}  // namespace wmsr
