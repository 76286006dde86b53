#pragma once

#include "wmsr/grid.hpp"

namespace wmsr {

// Catmull-Rom bicubic resampling (a = -0.5), clamp-to-edge, centers aligned:
// src = (dst + 0.5) * in/out - 0.5 per axis. Linear in x; not a tape op.
// Used for the degradation pipeline and the interpolation baseline.
Grid bicubic_resize(const Grid& x, int out_h, int out_w);

}  // namespace wmsr
