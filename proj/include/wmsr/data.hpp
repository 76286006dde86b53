#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmsr/grid.hpp"

namespace wmsr {

// Binary gridded-field format ("SSTG"): magic, version u16, rows u32,
// cols u32, channels u32, physical min/max f64, then row-major (per channel)
// float32 payload normalized to [0, 1]. All integers and floats are
// little-endian; the header is exactly 34 bytes.
struct GridFile {
    Grid grid;  // (1, channels, rows, cols)
    double vmin = 0.0, vmax = 1.0;
};

void write_grid(const std::string& path, const Grid& g, double vmin,
                double vmax);
GridFile read_grid(const std::string& path);

// kelvin = min + v * (max - min)
inline double denormalize(double v, double vmin, double vmax) {
    return vmin + v * (vmax - vmin);
}

// Synthetic sea-surface-temperature stand-in: meridional gradient +
// isotropic random field with power spectrum ~ k^(-beta) + tanh fronts,
// min-max normalized to [0, 1]. Deterministic in the seed.
struct SstParams {
    double gradient = 1.0;        // north-south ramp amplitude
    double spectrum_amp = 1.0;    // random-field standard deviation
    double beta = 3.0;            // power-spectrum log-log slope
    int fronts = 2;               // number of tanh-profile fronts
    double front_sharpness = 8.0;
};

Grid synth_sst(int height, int width, std::uint64_t seed,
               const SstParams& params = {});

// One training example: lr is exactly bicubic_resize(hr) at 1/r scale.
struct PatchPair {
    Grid hr, lr;
    int source = -1;  // index into the originating field list
    int row0 = 0, col0 = 0;
};

struct PairSets {
    std::vector<PatchPair> train, test;
};

// Deterministic field shuffle and the 4:1 field-level split size.
std::vector<int> shuffled_indices(int n, std::uint64_t seed);
int test_field_count(int n);

// Tiles every field into patch/stride crops and degrades each crop.
std::vector<PatchPair> tile_pairs(const std::vector<Grid>& fields, int r,
                                  int patch, int stride);

// Field-level 4:1 split, then tiling; train pairs are shuffled by the seed,
// test pairs stay in field/tile order.
PairSets make_pairs(const std::vector<Grid>& hr_fields, int r, int patch,
                    int stride, std::uint64_t seed);

// Plain-text dataset manifest: one "role path" pair per line.
struct ManifestEntry {
    std::string role, path;
};

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace wmsr
