#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "wmsr/data.hpp"
#include "wmsr/network.hpp"
#include "wmsr/plot.hpp"
#include "wmsr/trainer.hpp"

using namespace wmsr;
namespace fs = std::filesystem;

namespace {

struct RunOut {
    int code = -1;
    std::string out;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), std::streamsize(text.size()));
    REQUIRE(out.good());
}

// Runs the binary through the shell; stderr folds into the captured output
// unless split is requested.
RunOut run_cli(const std::string& args, bool stdout_only = false,
               const std::string& env = "") {
    static int counter = 0;
    const std::string cap =
        (fs::temp_directory_path() / ("wmsr_cli_cap_" + std::to_string(counter++)))
            .string();
    std::string cmd = env.empty() ? "" : env + " ";
    cmd += std::string(WMSR_CLI_PATH) + " " + args + " >" + cap +
           (stdout_only ? " 2>/dev/null" : " 2>&1");
    const int rc = std::system(cmd.c_str());
    RunOut r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(cap);
    fs::remove(cap);
    return r;
}

// Fresh scratch directory per test case.
std::string work_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

const char* kTinyConfig =
    "channels=4\ngroups=1\nblocks_per_group=1\nscale=2\nssm_state=2\n"
    "vssm_expand=2\nseed=3\n"
    "epochs=2\nbatch=2\npatch=16\nstride=16\nuse_schedule=0\nbase_lr=1e-4\n";

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("cli: --help matches the golden file byte for byte") {
    const RunOut r = run_cli("--help", true);
    CHECK(r.code == 0);
    CHECK(r.out == slurp(std::string(WMSR_GOLDEN_DIR) + "/help.txt"));
    // Every subcommand is listed.
    for (const char* sub :
         {"gen-data", "train", "eval", "sr", "fuse", "plot", "inspect"})
        CHECK(contains(r.out, sub));
}

TEST_CASE("cli: usage failures exit 2 with a one-line error") {
    for (const char* bad :
         {"", "frobnicate", "sr", "sr --ckpt x.wmck", "gen-data",
          "gen-data --out /tmp/x --size 6x6", "gen-data --out /tmp/x --size 32",
          "gen-data --out /tmp/x --fields 0", "eval", "eval --sr only.sstg"}) {
        const RunOut r = run_cli(bad);
        CAPTURE(bad);
        CHECK(r.code == 2);
        CHECK(contains(r.out, "error: "));
        CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
    }
}

TEST_CASE("cli: gen-data is deterministic and splits the manifest") {
    const std::string dir = work_dir("wmsr_cli_gen");
    const RunOut r1 =
        run_cli("gen-data --out " + dir + "/a --fields 6 --size 24x32 --seed 9");
    CHECK(r1.code == 0);
    const auto entries = read_manifest(dir + "/a/manifest.txt");
    REQUIRE(entries.size() == 6);
    int trains = 0, tests = 0;
    for (const auto& e : entries) {
        if (e.role == "train") ++trains;
        if (e.role == "test") ++tests;
        const GridFile g = read_grid(dir + "/a/" + e.path);
        CHECK(g.grid.shape.h == 24);
        CHECK(g.grid.shape.w == 32);
    }
    CHECK(trains == 5);
    CHECK(tests == 1);

    const RunOut r2 =
        run_cli("gen-data --out " + dir + "/b --fields 6 --size 24x32 --seed 9");
    CHECK(r2.code == 0);
    CHECK(slurp(dir + "/a/field_0000.sstg") == slurp(dir + "/b/field_0000.sstg"));
    CHECK(slurp(dir + "/a/manifest.txt") == slurp(dir + "/b/manifest.txt"));

    const RunOut r3 =
        run_cli("gen-data --out " + dir + "/c --fields 6 --size 24x32 --seed 10");
    CHECK(r3.code == 0);
    CHECK(slurp(dir + "/a/field_0000.sstg") != slurp(dir + "/c/field_0000.sstg"));
}

TEST_CASE("cli: train writes metrics and checkpoints, deterministically") {
    const std::string dir = work_dir("wmsr_cli_train");
    REQUIRE(run_cli("gen-data --out " + dir + "/data --fields 6 --size 32x32 --seed 5")
                .code == 0);
    spit(dir + "/run.cfg", kTinyConfig);

    const RunOut r1 = run_cli("train --config " + dir + "/run.cfg --data " + dir +
                              "/data --out " + dir + "/run1");
    CHECK(r1.code == 0);
    CHECK(contains(r1.out, "epoch,split,psnr_db,ssim"));
    CHECK(contains(r1.out, "0,train,"));
    CHECK(contains(r1.out, "0,test,"));
    CHECK(contains(r1.out, "best psnr_db"));
    REQUIRE(fs::exists(dir + "/run1/metrics.csv"));
    REQUIRE(fs::exists(dir + "/run1/best.wmck"));
    REQUIRE(fs::exists(dir + "/run1/last.wmck"));

    const RunOut r2 = run_cli("train --config " + dir + "/run.cfg --data " + dir +
                              "/data --out " + dir + "/run2");
    CHECK(r2.code == 0);
    CHECK(slurp(dir + "/run1/metrics.csv") == slurp(dir + "/run2/metrics.csv"));
    CHECK(slurp(dir + "/run1/last.wmck") == slurp(dir + "/run2/last.wmck"));

    SUBCASE("and the thread override does not change the bytes") {
        const RunOut r3 =
            run_cli("train --config " + dir + "/run.cfg --data " + dir +
                        "/data --out " + dir + "/run3",
                    false, "WMSR_THREADS=3");
        CHECK(r3.code == 0);
        CHECK(slurp(dir + "/run1/metrics.csv") == slurp(dir + "/run3/metrics.csv"));
        CHECK(slurp(dir + "/run1/last.wmck") == slurp(dir + "/run3/last.wmck"));
    }
    SUBCASE("a junk thread override is a usage error") {
        const RunOut r4 =
            run_cli("train --config " + dir + "/run.cfg --data " + dir +
                        "/data --out " + dir + "/run4",
                    false, "WMSR_THREADS=banana");
        CHECK(r4.code == 2);
        CHECK(contains(r4.out, "WMSR_THREADS"));
    }
}

TEST_CASE("cli: eval table mode and the 100 dB identity pair") {
    const std::string dir = work_dir("wmsr_cli_eval");
    REQUIRE(run_cli("gen-data --out " + dir + "/data --fields 6 --size 32x32 --seed 5")
                .code == 0);
    spit(dir + "/run.cfg", kTinyConfig);
    REQUIRE(run_cli("train --config " + dir + "/run.cfg --data " + dir +
                    "/data --out " + dir + "/run")
                .code == 0);

    const RunOut ev = run_cli("eval --ckpt " + dir + "/run/best.wmck --data " +
                              dir + "/data --patch 16");
    CHECK(ev.code == 0);
    CHECK(contains(ev.out, "scale,psnr_db,ssim,patches"));
    CHECK(contains(ev.out, "x2,"));

    // Identity fixture: a grid scored against itself caps at 100 dB.
    const std::string field = dir + "/data/field_0000.sstg";
    const RunOut pair = run_cli("eval --sr " + field + " --ref " + field);
    CHECK(pair.code == 0);
    CHECK(contains(pair.out, "psnr_db,ssim"));
    CHECK(contains(pair.out, "100.000000,1.000000"));
}

TEST_CASE("cli: sr writes a scaled GridFile and rejects a wrong --scale") {
    const std::string dir = work_dir("wmsr_cli_sr");
    REQUIRE(run_cli("gen-data --out " + dir + "/data --fields 6 --size 32x32 --seed 5")
                .code == 0);
    spit(dir + "/run.cfg", kTinyConfig);
    REQUIRE(run_cli("train --config " + dir + "/run.cfg --data " + dir +
                    "/data --out " + dir + "/run")
                .code == 0);

    const std::string in = dir + "/data/field_0001.sstg";
    const RunOut r = run_cli("sr --ckpt " + dir + "/run/last.wmck --in " + in +
                             " --scale 2 --out " + dir + "/up.sstg");
    CHECK(r.code == 0);
    const GridFile up = read_grid(dir + "/up.sstg");
    CHECK(up.grid.shape.h == 64);
    CHECK(up.grid.shape.w == 64);
    const GridFile src = read_grid(in);
    CHECK(up.vmin == src.vmin);
    CHECK(up.vmax == src.vmax);

    const RunOut bad = run_cli("sr --ckpt " + dir + "/run/last.wmck --in " + in +
                               " --scale 3 --out " + dir + "/nope.sstg");
    CHECK(bad.code == 2);
    CHECK(contains(bad.out, "does not match checkpoint scale"));
}

TEST_CASE("cli: fuse then sr agrees with the unfused model") {
    const std::string dir = work_dir("wmsr_cli_fuse");
    REQUIRE(run_cli("gen-data --out " + dir + "/data --fields 6 --size 32x32 --seed 5")
                .code == 0);
    spit(dir + "/run.cfg", kTinyConfig);
    REQUIRE(run_cli("train --config " + dir + "/run.cfg --data " + dir +
                    "/data --out " + dir + "/run")
                .code == 0);
    const std::string plain = dir + "/run/last.wmck";
    const std::string fused = dir + "/fused.wmck";
    REQUIRE(run_cli("fuse --ckpt " + plain + " --out " + fused).code == 0);

    const std::string in = dir + "/data/field_0002.sstg";
    REQUIRE(run_cli("sr --ckpt " + plain + " --in " + in + " --scale 2 --out " +
                    dir + "/a.sstg")
                .code == 0);
    REQUIRE(run_cli("sr --ckpt " + fused + " --in " + in + " --scale 2 --out " +
                    dir + "/b.sstg")
                .code == 0);

    // Full-precision fusion equivalence, via the loaded checkpoints.
    const CheckpointData cp = load_checkpoint(plain);
    const CheckpointData cf = load_checkpoint(fused);
    CHECK_FALSE(cp.model.fused);
    CHECK(cf.model.fused);
    const Grid src = read_grid(in).grid;
    const Grid ap = wmsr_infer(cp.model, src);
    const Grid af = wmsr_infer(cf.model, src);
    double derr = 0.0;
    for (size_t i = 0; i < ap.v.size(); ++i)
        derr = std::max(derr, std::abs(ap.v[i] - af.v[i]));
    CHECK(derr < 1e-8);

    // The emitted files quantize to float32, so allow one 32-bit ulp at 1.0.
    const GridFile fa = read_grid(dir + "/a.sstg");
    const GridFile fb = read_grid(dir + "/b.sstg");
    double ferr = 0.0;
    for (size_t i = 0; i < fa.grid.v.size(); ++i)
        ferr = std::max(ferr, std::abs(fa.grid.v[i] - fb.grid.v[i]));
    CHECK(ferr <= 6e-8);

    const RunOut again = run_cli("fuse --ckpt " + fused + " --out " + dir + "/z.wmck");
    CHECK(again.code == 3);
    CHECK(contains(again.out, "already fused"));
}

TEST_CASE("cli: plot emits deterministic PPM bytes") {
    const std::string dir = work_dir("wmsr_cli_plot");
    REQUIRE(run_cli("gen-data --out " + dir + "/data --fields 2 --size 24x24 --seed 2")
                .code == 0);
    const std::string a = dir + "/data/field_0000.sstg";
    const std::string b = dir + "/data/field_0001.sstg";

    const RunOut p1 = run_cli("plot --in " + a + " --out " + dir + "/p1");
    CHECK(p1.code == 0);
    REQUIRE(fs::exists(dir + "/p1/heat.ppm"));
    CHECK_FALSE(fs::exists(dir + "/p1/error.ppm"));
    const std::string bytes1 = slurp(dir + "/p1/heat.ppm");
    CHECK(bytes1.substr(0, 3) == "P6\n");
    CHECK(bytes1.size() == 13 + 24 * 24 * 3);  // "P6\n24 24\n255\n" + pixels

    const RunOut p2 = run_cli("plot --in " + a + " --out " + dir + "/p2");
    CHECK(p2.code == 0);
    CHECK(bytes1 == slurp(dir + "/p2/heat.ppm"));

    const RunOut p3 =
        run_cli("plot --in " + a + " --ref " + b + " --out " + dir + "/p3");
    CHECK(p3.code == 0);
    REQUIRE(fs::exists(dir + "/p3/error.ppm"));
    CHECK(slurp(dir + "/p3/heat.ppm") == bytes1);

    // Identical inputs give an all-minimum error map.
    REQUIRE(run_cli("plot --in " + a + " --ref " + a + " --out " + dir + "/p4")
                .code == 0);
    const std::string err = slurp(dir + "/p4/error.ppm");
    const auto zero = heat_rgb(0.0);
    for (size_t i = 13; i + 2 < err.size(); i += 3) {
        REQUIRE((unsigned char)(err[i]) == zero[0]);
        REQUIRE((unsigned char)(err[i + 1]) == zero[1]);
        REQUIRE((unsigned char)(err[i + 2]) == zero[2]);
    }
}

TEST_CASE("cli: data failures exit 3") {
    const std::string dir = work_dir("wmsr_cli_data_err");
    const RunOut missing = run_cli("eval --ckpt " + dir + "/none.wmck --data " + dir);
    CHECK(missing.code == 3);
    CHECK(contains(missing.out, "error: "));

    spit(dir + "/junk.sstg", "not a grid file at all");
    const RunOut junk = run_cli("plot --in " + dir + "/junk.sstg --out " + dir);
    CHECK(junk.code == 3);

    spit(dir + "/cfg.txt", "channels=4\nbogus_key=1\n");
    const RunOut badcfg = run_cli("inspect --config " + dir + "/cfg.txt");
    CHECK(badcfg.code == 3);
    CHECK(contains(badcfg.out, "unknown key"));
}

TEST_CASE("cli: non-finite model output exits 4") {
    const std::string dir = work_dir("wmsr_cli_nan");
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.groups = 1;
    cfg.blocks_per_group = 1;
    cfg.scale = 2;
    cfg.ssm_state = 2;
    cfg.vssm_expand = 2;
    WmsrModel m = build_model(cfg);
    const int pid = m.ps.find("head.out.w");
    REQUIRE(pid >= 0);
    m.ps[pid].value.v[0] = std::numeric_limits<double>::quiet_NaN();
    save_checkpoint(dir + "/bad.wmck", m);

    Grid g(Shape(1, 1, 16, 16), 0.5);
    write_grid(dir + "/in.sstg", g, 271.15, 303.15);
    const RunOut r = run_cli("sr --ckpt " + dir + "/bad.wmck --in " + dir +
                             "/in.sstg --scale 2 --out " + dir + "/out.sstg");
    CHECK(r.code == 4);
    CHECK(contains(r.out, "non-finite"));
}

TEST_CASE("cli: inspect prints matching counts and the published reference") {
    const std::string dir = work_dir("wmsr_cli_inspect");
    spit(dir + "/run.cfg", kTinyConfig);
    const RunOut r = run_cli("inspect --config " + dir + "/run.cfg");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "657.302K"));
    CHECK(contains(r.out, "parameters (runtime):  4721"));
    CHECK(contains(r.out, "parameters (analytic): 4721"));
    CHECK(contains(r.out, "flops:"));
}
