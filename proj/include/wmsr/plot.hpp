#pragma once

#include <array>
#include <string>

#include "wmsr/grid.hpp"

namespace wmsr {

// Fixed five-stop thermal colormap over [0, 1] (dark blue -> teal -> red).
// The table is part of the output contract: plot bytes are deterministic.
std::array<unsigned char, 3> heat_rgb(double v);

// Binary PPM (P6) of a (1,1,H,W) grid with values in [0, 1].
std::string render_ppm(const Grid& g);
void write_ppm(const std::string& path, const Grid& g);

// |a - b| scaled by a fixed gain of 4 and clipped to [0, 1], so a quarter of
// the full value range saturates the error map.
Grid abs_error_map(const Grid& a, const Grid& b);

}  // namespace wmsr
