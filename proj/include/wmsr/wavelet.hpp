#pragma once

#include "wmsr/grid.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

// One analysis level of the orthonormal Haar transform. Per 2x2 input block
// [[a,b],[c,d]]:
//   LL=(a+b+c+d)/2  LH=(a-b+c-d)/2  HL=(a+b-c-d)/2  HH=(a-b-c+d)/2
// LH = low along height / high along width.
struct WaveletBands {
    Grid ll, lh, hl, hh;
};

WaveletBands haar_dwt(const Grid& x);
Grid haar_idwt(const WaveletBands& b);

// Duplicates the last row/column as needed to make both spatial dims even.
Grid replicate_pad_even(const Grid& x);

// Tape variants keep the four bands stacked channel-wise as
// (B, 4C, H/2, W/2) in band order LL, LH, HL, HH (C channels each).
Grid haar_dwt_stack_fwd(const Grid& x);
Grid haar_idwt_stack_fwd(const Grid& bands);
int haar_dwt_stack(Tape& t, int x);
int haar_idwt_stack(Tape& t, int bands);

}  // namespace wmsr
