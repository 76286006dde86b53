// Command-line front end: data synthesis, training, evaluation, single-image
// super-resolution, gate fusion, plotting and model inspection.
//
// Exit codes: 0 success, 2 usage error, 3 data/file error, 4 numeric failure.
// Every failure prints exactly one "error: ..." line on stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wmsr/bicubic.hpp"
#include "wmsr/data.hpp"
#include "wmsr/network.hpp"
#include "wmsr/objective.hpp"
#include "wmsr/plot.hpp"
#include "wmsr/trainer.hpp"

namespace fs = std::filesystem;
using namespace wmsr;

namespace {

constexpr double kVmin = 271.15;  // kelvin range stored in GridFile headers
constexpr double kVmax = 303.15;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Malformed flag/environment values, as opposed to bad files or data.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail_with(int code, const std::string& msg) {
    std::cerr << "error: " << one_line(msg) << "\n";
    return code;
}

std::string fmt_count(std::int64_t n) {
    char buf[48];
    if (n >= 1000000)
        std::snprintf(buf, sizeof buf, "%.3fM", double(n) / 1e6);
    else
        std::snprintf(buf, sizeof buf, "%.3fK", double(n) / 1e3);
    return buf;
}

std::string resolve(const std::string& dir, const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute()) return p;
    return (fs::path(dir) / path).string();
}

// The run config file carries both model and training keys. Training keys
// are consumed here; everything else is handed to the model-config parser
// (which rejects unknown keys).
struct RunSpec {
    ModelConfig model;
    TrainConfig tc;
    int patch = 96;
    int stride = 96;
};

RunSpec parse_run_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config " + path);
    RunSpec spec;
    std::string model_text, line;
    int lineno = 0;
    const auto trim = [](std::string s) {
        const size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        std::string raw = line;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        raw = trim(raw);
        if (raw.empty()) continue;
        const size_t eq = raw.find('=');
        require(eq != std::string::npos, "config line " + std::to_string(lineno) +
                                             ": expected key=value");
        const std::string key = trim(raw.substr(0, eq));
        const std::string val = trim(raw.substr(eq + 1));
        try {
            if (key == "epochs") spec.tc.epochs = std::stoi(val);
            else if (key == "batch") spec.tc.batch = std::stoi(val);
            else if (key == "base_lr") spec.tc.base_lr = std::stod(val);
            else if (key == "use_schedule") spec.tc.use_schedule = std::stoi(val) != 0;
            else if (key == "eval_every") spec.tc.eval_every = std::stoi(val);
            else if (key == "max_steps") spec.tc.max_steps = std::stoi(val);
            else if (key == "target_train_psnr") spec.tc.target_train_psnr = std::stod(val);
            else if (key == "lambda_rec") spec.tc.loss.lambda_rec = std::stod(val);
            else if (key == "lambda_freq") spec.tc.loss.lambda_freq = std::stod(val);
            else if (key == "patch") spec.patch = std::stoi(val);
            else if (key == "stride") spec.stride = std::stoi(val);
            else model_text += raw + "\n";
        } catch (const std::exception&) {
            fail("config: bad value for '" + key + "': '" + val + "'");
        }
    }
    std::istringstream ms(model_text);
    spec.model = parse_model_config(ms);
    spec.tc.seed = spec.model.seed;
    return spec;
}

int env_threads() {
    const char* env = std::getenv("WMSR_THREADS");
    if (!env) return 1;
    int t = 0;
    try {
        t = std::stoi(env);
    } catch (const std::exception&) {
        t = 0;
    }
    if (t < 1 || t > 64)
        throw UsageError(std::string("WMSR_THREADS must be in [1,64], got '") +
                         env + "'");
    return t;
}

// Manifest entries of one role, loaded as grids.
std::vector<Grid> load_fields(const std::string& dir,
                              const std::vector<ManifestEntry>& entries,
                              const std::string& role) {
    std::vector<Grid> fields;
    for (const ManifestEntry& e : entries) {
        if (e.role != role) continue;
        GridFile gf = read_grid(resolve(dir, e.path));
        require(gf.grid.shape.c == 1,
                "field " + e.path + " has " + std::to_string(gf.grid.shape.c) +
                    " channels; expected 1");
        fields.push_back(std::move(gf.grid));
    }
    return fields;
}

// ------------------------------------------------------------ subcommands

int cmd_gen_data(const std::string& out_dir, int fields, const std::string& size,
                 std::uint64_t seed) {
    const size_t x = size.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= size.size())
        throw UsageError("--size expects HxW, got '" + size + "'");
    int h = 0, w = 0;
    try {
        h = std::stoi(size.substr(0, x));
        w = std::stoi(size.substr(x + 1));
    } catch (const std::exception&) {
        throw UsageError("--size expects HxW, got '" + size + "'");
    }
    if (h < 8 || w < 8) throw UsageError("--size too small; need at least 8x8");
    if (fields < 1) throw UsageError("--fields must be >= 1");

    fs::create_directories(out_dir);
    std::vector<std::string> names;
    for (int i = 0; i < fields; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "field_%04d.sstg", i);
        const Grid g = synth_sst(h, w, seed + std::uint64_t(i));
        write_grid(resolve(out_dir, name), g, kVmin, kVmax);
        names.push_back(name);
    }
    // Same field-level split rule as make_pairs: shuffle, last fifth is test.
    const std::vector<int> order = shuffled_indices(fields, seed);
    const int n_test = test_field_count(fields);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < fields; ++i) {
        const bool is_test = i >= fields - n_test;
        entries.push_back(
            ManifestEntry{is_test ? "test" : "train", names[size_t(order[size_t(i)])]});
    }
    write_manifest(resolve(out_dir, "manifest.txt"), entries);
    std::cout << "wrote " << fields << " fields (" << h << "x" << w << ", "
              << (fields - n_test) << " train / " << n_test
              << " test) under " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir,
              const std::string& out_dir) {
    RunSpec spec = parse_run_config(config);
    const auto entries = read_manifest(resolve(data_dir, "manifest.txt"));
    const std::vector<Grid> train_fields = load_fields(data_dir, entries, "train");
    const std::vector<Grid> test_fields = load_fields(data_dir, entries, "test");
    require(!train_fields.empty(), "manifest has no train fields");

    PairSets data;
    data.train = tile_pairs(train_fields, spec.model.scale, spec.patch, spec.stride);
    if (!test_fields.empty())
        data.test = tile_pairs(test_fields, spec.model.scale, spec.patch, spec.stride);

    WmsrModel model = build_model(spec.model);
    spec.tc.out_dir = out_dir;
    spec.tc.threads = env_threads();
    spec.tc.echo = &std::cout;
    std::cout << "training " << fmt_count(model.ps.total_params())
              << " parameters on " << data.train.size() << " train / "
              << data.test.size() << " test patches\n"
              << "epoch,split,psnr_db,ssim\n";
    const TrainResult res = train(model, data, spec.tc);
    if (res.aborted_nonfinite)
        return fail_with(kExitNumeric,
                         "non-finite loss at step " +
                             std::to_string(res.steps_run + 1) +
                             "; last good checkpoint kept in " + out_dir);
    std::cout << "best psnr_db " << res.best_psnr << " at epoch "
              << res.best_epoch << "; checkpoints under " << out_dir << "\n";
    return 0;
}

int cmd_eval_pair(const std::string& sr_path, const std::string& ref_path) {
    const GridFile sr = read_grid(sr_path);
    const GridFile ref = read_grid(ref_path);
    require(sr.grid.shape == ref.grid.shape,
            "grid shapes differ: " + sr.grid.shape.str() + " vs " +
                ref.grid.shape.str());
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", psnr(sr.grid, ref.grid),
                  ssim(sr.grid, ref.grid));
    std::cout << "psnr_db,ssim\n" << buf << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int patch,
             int stride) {
    const CheckpointData ck = load_checkpoint(ckpt);
    const auto entries = read_manifest(resolve(data_dir, "manifest.txt"));
    const std::vector<Grid> test_fields = load_fields(data_dir, entries, "test");
    require(!test_fields.empty(), "manifest has no test fields");
    if (stride <= 0) stride = patch;
    const std::vector<PatchPair> pairs =
        tile_pairs(test_fields, ck.model.cfg.scale, patch, stride);
    const EvalStats s = eval_pairs(ck.model, pairs);
    char buf[96];
    std::snprintf(buf, sizeof buf, "x%d,%.6f,%.6f,%d", ck.model.cfg.scale,
                  s.psnr_db, s.ssim, s.n);
    std::cout << "scale,psnr_db,ssim,patches\n" << buf << "\n";
    return 0;
}

int cmd_sr(const std::string& ckpt, const std::string& in_path, int scale,
           const std::string& out_path) {
    const CheckpointData ck = load_checkpoint(ckpt);
    if (scale != ck.model.cfg.scale)
        return fail_with(kExitUsage,
                         "--scale " + std::to_string(scale) +
                             " does not match checkpoint scale " +
                             std::to_string(ck.model.cfg.scale));
    const GridFile in = read_grid(in_path);
    require(in.grid.shape.c == 1, "expected a single-channel grid, got " +
                                      std::to_string(in.grid.shape.c));
    const Grid raw = wmsr_infer(ck.model, in.grid);
    if (!raw.all_finite())
        return fail_with(kExitNumeric, "non-finite values in the super-resolved output");
    write_grid(out_path, clamp01(raw), in.vmin, in.vmax);
    std::cout << "wrote " << out_path << " (" << in.grid.shape.h << "x"
              << in.grid.shape.w << " -> " << raw.shape.h << "x" << raw.shape.w
              << ")\n";
    return 0;
}

int cmd_fuse(const std::string& ckpt, const std::string& out_path) {
    const CheckpointData ck = load_checkpoint(ckpt);
    require(!ck.model.fused, "checkpoint is already fused");
    const WmsrModel fused = fuse_model(ck.model);
    save_checkpoint(out_path, fused);
    std::cout << "wrote " << out_path << " ("
              << fmt_count(ck.model.ps.total_params()) << " -> "
              << fmt_count(fused.ps.total_params()) << " parameters)\n";
    return 0;
}

int cmd_plot(const std::string& in_path, const std::string& ref_path,
             const std::string& out_dir) {
    const GridFile in = read_grid(in_path);
    require(in.grid.shape.c == 1, "expected a single-channel grid");
    fs::create_directories(out_dir);
    const std::string heat = resolve(out_dir, "heat.ppm");
    write_ppm(heat, in.grid);
    std::cout << "wrote " << heat << "\n";
    if (!ref_path.empty()) {
        const GridFile ref = read_grid(ref_path);
        require(ref.grid.shape == in.grid.shape,
                "grid shapes differ: " + in.grid.shape.str() + " vs " +
                    ref.grid.shape.str());
        const std::string err = resolve(out_dir, "error.ppm");
        write_ppm(err, abs_error_map(in.grid, ref.grid));
        std::cout << "wrote " << err << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& config) {
    const RunSpec spec = parse_run_config(config);
    const ModelConfig& cfg = spec.model;
    const WmsrModel model = build_model(cfg);
    const std::int64_t runtime = model.ps.total_params();
    const std::int64_t analytic = analytic_param_count(cfg);
    const std::int64_t fused = analytic_param_count(cfg, true);
    const int probe = 48;
    std::cout << "config: channels=" << cfg.channels << " groups=" << cfg.groups
              << " blocks_per_group=" << cfg.blocks_per_group
              << " scale=" << cfg.scale << " ssm_state=" << cfg.ssm_state
              << " vssm_expand=" << cfg.vssm_expand << "\n";
    std::cout << "parameters (runtime):  " << runtime << " (" << fmt_count(runtime)
              << ")\n";
    std::cout << "parameters (analytic): " << analytic << " ("
              << fmt_count(analytic) << ")\n";
    std::cout << "parameters (fused):    " << fused << " (" << fmt_count(fused)
              << ")\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f",
                  flops_estimate(cfg, probe, probe) / 1e9);
    std::cout << "flops: ~" << buf << " GFLOP per " << probe << "x" << probe
              << " input (estimate)\n";
    std::cout << "reference model (channels=64, 4 groups x 4 blocks, x4): "
              << "657.302K parameters, 47.15 GFLOPs\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wavelet-domain state-space super-resolution for gridded "
                 "sea-surface temperature fields"};
    app.name("wmsr");
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write synthetic SST GridFiles and a manifest");
    std::string gen_out, gen_size = "192x192";
    int gen_fields = 16;
    std::uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--fields", gen_fields, "Number of fields to generate");
    gen->add_option("--size", gen_size, "Field size as HxW");
    gen->add_option("--seed", gen_seed, "Generation seed");

    // train
    auto* tr = app.add_subcommand("train", "Train a model from a config and a data directory");
    std::string tr_config, tr_data, tr_out;
    tr->add_option("--config", tr_config, "Run config file (model + training keys)")->required();
    tr->add_option("--data", tr_data, "Data directory containing manifest.txt")->required();
    tr->add_option("--out", tr_out, "Output directory for checkpoints and metrics")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Report PSNR/SSIM of a checkpoint on the test split, or of one grid pair");
    std::string ev_ckpt, ev_data, ev_sr, ev_ref;
    int ev_patch = 48, ev_stride = 0;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint file");
    ev->add_option("--data", ev_data, "Data directory containing manifest.txt");
    ev->add_option("--patch", ev_patch, "Evaluation patch size (HR pixels)");
    ev->add_option("--stride", ev_stride, "Tiling stride (defaults to --patch)");
    ev->add_option("--sr", ev_sr, "Grid to score (pair mode)");
    ev->add_option("--ref", ev_ref, "Reference grid (pair mode)");

    // sr
    auto* sr = app.add_subcommand("sr", "Super-resolve one GridFile");
    std::string sr_ckpt, sr_in, sr_out;
    int sr_scale = 0;
    sr->add_option("--ckpt", sr_ckpt, "Checkpoint file")->required();
    sr->add_option("--in", sr_in, "Input GridFile")->required();
    sr->add_option("--scale", sr_scale, "Upscale factor; must match the checkpoint")->required();
    sr->add_option("--out", sr_out, "Output GridFile")->required();

    // fuse
    auto* fu = app.add_subcommand("fuse", "Collapse the multi-branch gates into single kernels");
    std::string fu_ckpt, fu_out;
    fu->add_option("--ckpt", fu_ckpt, "Multi-branch checkpoint")->required();
    fu->add_option("--out", fu_out, "Fused checkpoint to write")->required();

    // plot
    auto* pl = app.add_subcommand("plot", "Render a grid (and optional error map) as PPM images");
    std::string pl_in, pl_ref, pl_out;
    pl->add_option("--in", pl_in, "GridFile to render")->required();
    pl->add_option("--ref", pl_ref, "Reference GridFile for an |error| map");
    pl->add_option("--out", pl_out, "Output directory")->required();

    // inspect
    auto* in = app.add_subcommand("inspect", "Print parameter counts and a FLOPs estimate for a config");
    std::string in_config;
    in->add_option("--config", in_config, "Run config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        return fail_with(kExitUsage, e.what());
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_fields, gen_size, gen_seed);
        if (tr->parsed()) return cmd_train(tr_config, tr_data, tr_out);
        if (ev->parsed()) {
            const bool pair = !ev_sr.empty() || !ev_ref.empty();
            if (pair) {
                if (ev_sr.empty() || ev_ref.empty())
                    return fail_with(kExitUsage, "pair mode needs both --sr and --ref");
                return cmd_eval_pair(ev_sr, ev_ref);
            }
            if (ev_ckpt.empty() || ev_data.empty())
                return fail_with(kExitUsage, "eval needs --ckpt and --data (or --sr and --ref)");
            return cmd_eval(ev_ckpt, ev_data, ev_patch, ev_stride);
        }
        if (sr->parsed()) return cmd_sr(sr_ckpt, sr_in, sr_scale, sr_out);
        if (fu->parsed()) return cmd_fuse(fu_ckpt, fu_out);
        if (pl->parsed()) return cmd_plot(pl_in, pl_ref, pl_out);
        if (in->parsed()) return cmd_inspect(in_config);
    } catch (const UsageError& e) {
        return fail_with(kExitUsage, e.what());
    } catch (const std::exception& e) {
        return fail_with(kExitData, e.what());
    }
    return fail_with(kExitUsage, "no subcommand given");
}
