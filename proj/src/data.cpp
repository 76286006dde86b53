#include "wmsr/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "wmsr/bicubic.hpp"
#include "wmsr/rng.hpp"

namespace wmsr {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[4] = {'S', 'S', 'T', 'G'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& b, std::uint16_t v) {
    b.push_back(char(v & 0xff));
    b.push_back(char(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_bits(const std::string& b, size_t off, int nbytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i)
        v |= std::uint64_t(std::uint8_t(b[off + size_t(i)])) << (8 * i);
    return v;
}

}  // namespace

void write_grid(const std::string& path, const Grid& g, double vmin,
                double vmax) {
    require(g.shape.b == 1, "write_grid: batch dimension must be 1, got " +
                                g.shape.str());
    require(vmin < vmax, "write_grid: min must be below max");
    for (double v : g.v)
        require(v >= 0.0 && v <= 1.0,
                "write_grid: payload values must lie in [0,1]");
    std::string buf;
    buf.reserve(34 + g.v.size() * 4);
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u32(buf, std::uint32_t(g.shape.h));
    put_u32(buf, std::uint32_t(g.shape.w));
    put_u32(buf, std::uint32_t(g.shape.c));
    put_u64(buf, std::bit_cast<std::uint64_t>(vmin));
    put_u64(buf, std::bit_cast<std::uint64_t>(vmax));
    for (double v : g.v)
        put_u32(buf, std::bit_cast<std::uint32_t>(float(v)));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "write_grid: cannot open " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    require(out.good(), "write_grid: write failed for " + path);
}

GridFile read_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_grid: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();
    require(buf.size() >= 34, "read_grid: " + path +
                                  ": file shorter than the 34-byte header");
    require(std::memcmp(buf.data(), kMagic, 4) == 0,
            "read_grid: " + path + ": bad magic, not an SSTG file");
    const auto version = std::uint16_t(get_bits(buf, 4, 2));
    require(version == kVersion,
            "read_grid: " + path + ": unsupported version " +
                std::to_string(version));
    const auto rows = std::uint32_t(get_bits(buf, 6, 4));
    const auto cols = std::uint32_t(get_bits(buf, 10, 4));
    const auto channels = std::uint32_t(get_bits(buf, 14, 4));
    require(rows > 0 && cols > 0 && channels > 0,
            "read_grid: " + path + ": zero dimension in header");
    GridFile f;
    f.vmin = std::bit_cast<double>(get_bits(buf, 18, 8));
    f.vmax = std::bit_cast<double>(get_bits(buf, 26, 8));
    require(f.vmin < f.vmax, "read_grid: " + path + ": min must be below max");
    const std::uint64_t count =
        std::uint64_t(rows) * cols * channels;
    require(buf.size() == 34 + count * 4,
            "read_grid: " + path + ": payload length mismatch, expected " +
                std::to_string(count * 4) + " bytes, got " +
                std::to_string(buf.size() - 34));
    f.grid = Grid(Shape(1, int(channels), int(rows), int(cols)));
    for (std::uint64_t i = 0; i < count; ++i) {
        const float v = std::bit_cast<float>(
            std::uint32_t(get_bits(buf, 34 + size_t(i) * 4, 4)));
        require(v >= 0.0f && v <= 1.0f,
                "read_grid: " + path + ": payload value outside [0,1]");
        f.grid.v[size_t(i)] = double(v);
    }
    return f;
}

Grid synth_sst(int height, int width, std::uint64_t seed,
               const SstParams& p) {
    require(height > 0 && width > 0,
            "synth_sst: dimensions must be positive");
    require(p.beta > 0.0, "synth_sst: beta must be positive");
    require(p.fronts >= 0, "synth_sst: front count must be non-negative");
    const int H = height, W = width;
    Rng rng(seed);
    Grid field(Shape(1, 1, H, W), 0.0);

    // Large-scale meridional ramp.
    for (int i = 0; i < H; ++i) {
        const double lat = (H > 1) ? double(i) / (H - 1) - 0.5 : 0.0;
        for (int j = 0; j < W; ++j) field.at(0, 0, i, j) = p.gradient * lat;
    }

    // Random field with power ~ k^(-beta): draw a Hermitian spectrum with
    // amplitude k^(-beta/2), invert it separably, normalize to unit std.
    if (p.spectrum_amp != 0.0) {
        const size_t plane = size_t(H) * size_t(W);
        std::vector<double> sre(plane, 0.0), sim(plane, 0.0);
        for (int u = 0; u < H; ++u)
            for (int v = 0; v < W; ++v) {
                const int up = (H - u) % H, vp = (W - v) % W;
                if (std::make_pair(u, v) > std::make_pair(up, vp)) continue;
                const double ku = std::min(u, H - u), kv = std::min(v, W - v);
                const double k = std::hypot(ku, kv);
                if (k == 0.0) continue;
                const double amp = std::pow(k, -p.beta / 2.0);
                const size_t a = size_t(u) * size_t(W) + size_t(v);
                const size_t b = size_t(up) * size_t(W) + size_t(vp);
                if (a == b) {
                    sre[a] = amp * rng.normal();
                } else {
                    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
                    sre[a] = amp * rng.normal() * inv_sqrt2;
                    sim[a] = amp * rng.normal() * inv_sqrt2;
                    sre[b] = sre[a];
                    sim[b] = -sim[a];
                }
            }
        // f(x,y) = Re sum_{u,v} S(u,v) exp(+i 2 pi (ux/H + vy/W)), separable.
        std::vector<double> pre(plane), pim(plane), noise(plane);
        for (int x = 0; x < H; ++x)
            for (int v = 0; v < W; ++v) {
                double ar = 0.0, ai = 0.0;
                for (int u = 0; u < H; ++u) {
                    const double th = 2.0 * kPi * double(u) * x / H;
                    const double c = std::cos(th), s = std::sin(th);
                    const double gr = sre[size_t(u) * size_t(W) + size_t(v)];
                    const double gi = sim[size_t(u) * size_t(W) + size_t(v)];
                    ar += gr * c - gi * s;
                    ai += gi * c + gr * s;
                }
                pre[size_t(x) * size_t(W) + size_t(v)] = ar;
                pim[size_t(x) * size_t(W) + size_t(v)] = ai;
            }
        double mean = 0.0;
        for (int x = 0; x < H; ++x)
            for (int y = 0; y < W; ++y) {
                double acc = 0.0;
                for (int v = 0; v < W; ++v) {
                    const double th = 2.0 * kPi * double(v) * y / W;
                    acc += pre[size_t(x) * size_t(W) + size_t(v)] * std::cos(th) -
                           pim[size_t(x) * size_t(W) + size_t(v)] * std::sin(th);
                }
                noise[size_t(x) * size_t(W) + size_t(y)] = acc;
                mean += acc;
            }
        mean /= double(plane);
        double var = 0.0;
        for (double v : noise) var += (v - mean) * (v - mean);
        var /= double(plane);
        const double scale =
            (var > 0.0) ? p.spectrum_amp / std::sqrt(var) : 0.0;
        for (size_t i = 0; i < plane; ++i)
            field.v[i] += (noise[i] - mean) * scale;
    }

    // Tilted tanh-profile fronts.
    for (int f = 0; f < p.fronts; ++f) {
        const double pos = 0.2 + 0.6 * rng.uniform();
        const double tilt = 0.4 * (rng.uniform() - 0.5);
        const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) *
                           (0.3 + 0.4 * rng.uniform());
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double lat = (H > 1) ? double(i) / (H - 1) : 0.0;
                const double lon = (W > 1) ? double(j) / (W - 1) - 0.5 : 0.0;
                field.at(0, 0, i, j) +=
                    amp * std::tanh(p.front_sharpness *
                                    (lat - pos - tilt * lon));
            }
    }

    // Min-max normalize; a degenerate (constant) field maps to all 0.5.
    double lo = field.v[0], hi = field.v[0];
    for (double v : field.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (double& v : field.v) v = (v - lo) / (hi - lo);
    } else {
        field.fill(0.5);
    }
    return field;
}

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = int(rng.next_u64() % std::uint64_t(i + 1));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    return idx;
}

int test_field_count(int n) {
    const int t = n / 5;
    return (t == 0 && n >= 2) ? 1 : t;
}

std::vector<PatchPair> tile_pairs(const std::vector<Grid>& fields, int r,
                                  int patch, int stride) {
    require(r >= 2 && r <= 4, "tile_pairs: scale must be 2, 3 or 4");
    require(patch > 0 && patch % 2 == 0,
            "tile_pairs: patch size must be positive and even");
    require(patch % r == 0,
            "tile_pairs: patch size must be divisible by the scale");
    require(stride > 0, "tile_pairs: stride must be positive");
    std::vector<PatchPair> out;
    for (size_t f = 0; f < fields.size(); ++f) {
        const Grid& g = fields[f];
        require(g.shape.b == 1 && g.shape.c == 1,
                "tile_pairs: fields must be (1,1,H,W), got " + g.shape.str());
        require(g.shape.h >= patch && g.shape.w >= patch,
                "tile_pairs: patch " + std::to_string(patch) +
                    " larger than field " + g.shape.str());
        for (int i0 = 0; i0 + patch <= g.shape.h; i0 += stride)
            for (int j0 = 0; j0 + patch <= g.shape.w; j0 += stride) {
                PatchPair pp;
                pp.source = int(f);
                pp.row0 = i0;
                pp.col0 = j0;
                pp.hr = Grid(Shape(1, 1, patch, patch));
                for (int i = 0; i < patch; ++i)
                    for (int j = 0; j < patch; ++j)
                        pp.hr.at(0, 0, i, j) = g.at(0, 0, i0 + i, j0 + j);
                pp.lr = bicubic_resize(pp.hr, patch / r, patch / r);
                out.push_back(std::move(pp));
            }
    }
    return out;
}

PairSets make_pairs(const std::vector<Grid>& hr_fields, int r, int patch,
                    int stride, std::uint64_t seed) {
    const int n = int(hr_fields.size());
    require(n > 0, "make_pairs: no source fields");
    const std::vector<int> order = shuffled_indices(n, seed);
    const int n_test = test_field_count(n);
    std::vector<Grid> train_fields, test_fields;
    std::vector<int> train_src, test_src;
    for (int i = 0; i < n; ++i) {
        const int src = order[size_t(i)];
        if (i < n - n_test) {
            train_fields.push_back(hr_fields[size_t(src)]);
            train_src.push_back(src);
        } else {
            test_fields.push_back(hr_fields[size_t(src)]);
            test_src.push_back(src);
        }
    }
    PairSets sets;
    sets.train = tile_pairs(train_fields, r, patch, stride);
    sets.test = tile_pairs(test_fields, r, patch, stride);
    for (PatchPair& p : sets.train) p.source = train_src[size_t(p.source)];
    for (PatchPair& p : sets.test) p.source = test_src[size_t(p.source)];
    // Shuffle training pairs; reuse the generator past the field permutation.
    Rng rng(seed + 1);
    for (int i = int(sets.train.size()) - 1; i > 0; --i) {
        const int j = int(rng.next_u64() % std::uint64_t(i + 1));
        std::swap(sets.train[size_t(i)], sets.train[size_t(j)]);
    }
    return sets;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), "write_manifest: cannot open " + path);
    for (const auto& e : entries) {
        require(e.role == "train" || e.role == "test",
                "write_manifest: role must be train or test, got " + e.role);
        require(e.path.find_first_of(" \t\n") == std::string::npos,
                "write_manifest: path must not contain whitespace: " + e.path);
        out << e.role << " " << e.path << "\n";
    }
    require(out.good(), "write_manifest: write failed for " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "read_manifest: cannot open " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        ManifestEntry e;
        ls >> e.role >> e.path;
        require(!e.role.empty() && !e.path.empty() &&
                    (e.role == "train" || e.role == "test"),
                "read_manifest: " + path + " line " + std::to_string(lineno) +
                    ": expected 'train|test path'");
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace wmsr
