#include "wmsr/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "wmsr/rng.hpp"

namespace wmsr {

void OptimState::init(const ParamStore& ps) {
    m.clear();
    v.clear();
    m.reserve(size_t(ps.size()));
    v.reserve(size_t(ps.size()));
    for (int p = 0; p < ps.size(); ++p) {
        m.emplace_back(ps[p].value.shape, 0.0);
        v.emplace_back(ps[p].value.shape, 0.0);
    }
    step = 0;
}

void adam_step(ParamStore& ps, OptimState& st, double lr) {
    require(st.initialized() && int(st.m.size()) == ps.size(),
            "adam_step: optimizer state does not match parameter store");
    for (int p = 0; p < ps.size(); ++p)
        require(ps[p].grad.all_finite(),
                "adam_step: non-finite gradient in " + ps[p].name);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (int p = 0; p < ps.size(); ++p) {
        ParamStore::Entry& e = ps[p];
        Grid& mm = st.m[size_t(p)];
        Grid& vv = st.v[size_t(p)];
        for (size_t i = 0; i < e.value.v.size(); ++i) {
            const double g = e.grad.v[i];
            mm.v[i] = st.beta1 * mm.v[i] + (1.0 - st.beta1) * g;
            vv.v[i] = st.beta2 * vv.v[i] + (1.0 - st.beta2) * g * g;
            const double mh = mm.v[i] / bc1;
            const double vh = vv.v[i] / bc2;
            e.value.v[i] -= lr * mh / (std::sqrt(vh) + st.eps);
        }
    }
}

double lr_schedule(int epoch, double base_lr) {
    require(epoch >= 0, "lr_schedule: negative epoch");
    require(base_lr > 0.0, "lr_schedule: base learning rate must be positive");
    const int seg = epoch / 20;
    const int t = epoch % 20;
    // ldexp keeps the halving exact, and cos(0) = 1 makes segment starts
    // land on base * 2^-seg with no rounding.
    const double start = std::ldexp(base_lr, -seg);
    return start * (0.75 + 0.25 * std::cos(M_PI * double(t) / 20.0));
}

Grid clamp01(Grid g) {
    for (double& x : g.v) x = std::min(1.0, std::max(0.0, x));
    return g;
}

EvalStats eval_pairs(const WmsrModel& m, const std::vector<PatchPair>& pairs) {
    require(!pairs.empty(), "eval_pairs: empty pair list");
    EvalStats s;
    for (const PatchPair& p : pairs) {
        const Grid sr = clamp01(wmsr_infer(m, p.lr));
        s.psnr_db += psnr(sr, p.hr);
        s.ssim += ssim(sr, p.hr);
        ++s.n;
    }
    s.psnr_db /= double(s.n);
    s.ssim /= double(s.n);
    return s;
}

// ---------------------------------------------------------------- training

namespace {

void fisher_yates(std::vector<int>& a, Rng& rng) {
    for (size_t i = a.size(); i > 1; --i) {
        const size_t j = size_t(rng.next_u64() % i);
        std::swap(a[i - 1], a[j]);
    }
}

// Parameter gradients of one sample's loss, extracted from its private tape.
// Slots of parameters the graph never touched stay empty.
void collect_grads(const Tape& t, std::vector<Grid>& out) {
    for (int i = 0; i < t.size(); ++i) {
        const Tape::Node& n = t.node(i);
        if (n.param_id < 0 || !n.has_grad) continue;
        Grid& dst = out[size_t(n.param_id)];
        if (dst.v.empty()) {
            dst = n.grad;
        } else {
            for (size_t k = 0; k < dst.v.size(); ++k) dst.v[k] += n.grad.v[k];
        }
    }
}

std::string metric_row(int epoch, const char* split, const EvalStats& s) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f", epoch, split, s.psnr_db,
                  s.ssim);
    return buf;
}

}  // namespace

TrainResult train(WmsrModel& m, const PairSets& data, const TrainConfig& tc) {
    require(!data.train.empty(), "train: empty training split");
    require(tc.epochs >= 1, "train: epochs must be >= 1");
    require(tc.batch >= 1, "train: batch must be >= 1");
    require(tc.threads >= 1, "train: threads must be >= 1");
    require(tc.eval_every >= 1, "train: eval_every must be >= 1");
    validate(tc.loss);

    const int r = m.cfg.scale;
    auto check_pair = [&](const PatchPair& p, const char* split) {
        require(p.lr.shape.c == 1 && p.hr.shape.c == 1 &&
                    p.hr.shape.h == p.lr.shape.h * r &&
                    p.hr.shape.w == p.lr.shape.w * r,
                std::string("train: ") + split + " pair " + p.lr.shape.str() +
                    " -> " + p.hr.shape.str() + " does not match scale " +
                    std::to_string(r));
    };
    for (const PatchPair& p : data.train) check_pair(p, "train");
    for (const PatchPair& p : data.test) check_pair(p, "test");

    TrainResult res;
    std::ofstream metrics;
    if (!tc.out_dir.empty()) {
        std::filesystem::create_directories(tc.out_dir);
        metrics.open(tc.out_dir + "/metrics.csv");
        require(metrics.good(), "train: cannot write metrics under " + tc.out_dir);
        metrics << "epoch,split,psnr_db,ssim\n";
        res.best_path = tc.out_dir + "/best.wmck";
        res.last_path = tc.out_dir + "/last.wmck";
    }
    auto emit = [&](const std::string& row) {
        res.metric_rows.push_back(row);
        if (metrics.is_open()) metrics << row << "\n" << std::flush;
        if (tc.echo) *tc.echo << row << "\n";
    };

    OptimState opt;
    opt.init(m.ps);
    Rng order(tc.seed);
    const int n = int(data.train.size());
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[size_t(i)] = i;

    // One sample's forward/backward on a private tape; called from worker
    // threads, so it only reads the model and writes its own slots.
    auto run_sample = [&](int pair_idx, std::vector<Grid>& gout, double& lout) {
        const PatchPair& pr = data.train[size_t(pair_idx)];
        Tape t;
        const int x = t.leaf(pr.lr);
        const int sr = wmsr_forward(t, m, x);
        const int hr = t.leaf(pr.hr);
        const int loss = total_loss(t, sr, hr, tc.loss);
        lout = t.val(loss).v[0];
        if (!std::isfinite(lout)) return;
        t.backward(loss);
        collect_grads(t, gout);
    };

    const double target = tc.target_train_psnr;
    bool stop = false;
    for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
        const double lr = tc.use_schedule ? lr_schedule(epoch, tc.base_lr)
                                          : tc.base_lr;
        fisher_yates(perm, order);
        for (int off = 0; off < n && !stop; off += tc.batch) {
            const int bsz = std::min(tc.batch, n - off);
            std::vector<std::vector<Grid>> grads(
                size_t(bsz), std::vector<Grid>(size_t(m.ps.size())));
            std::vector<double> losses(size_t(bsz), 0.0);
            const int workers = std::min(tc.threads, bsz);
            if (workers <= 1) {
                for (int s = 0; s < bsz; ++s)
                    run_sample(perm[size_t(off + s)], grads[size_t(s)],
                               losses[size_t(s)]);
            } else {
                std::vector<std::thread> pool;
                pool.reserve(size_t(workers));
                for (int tid = 0; tid < workers; ++tid)
                    pool.emplace_back([&, tid] {
                        for (int s = tid; s < bsz; s += workers)
                            run_sample(perm[size_t(off + s)], grads[size_t(s)],
                                       losses[size_t(s)]);
                    });
                for (std::thread& w : pool) w.join();
            }

            bool bad = false;
            for (double l : losses) bad = bad || !std::isfinite(l);
            if (!bad) {
                // Merge in sample order so sums do not depend on the thread
                // count, then rescale to the batch mean.
                m.ps.zero_grad();
                for (int s = 0; s < bsz; ++s)
                    for (int p = 0; p < m.ps.size(); ++p) {
                        const Grid& g = grads[size_t(s)][size_t(p)];
                        if (g.v.empty()) continue;
                        Grid& dst = m.ps[p].grad;
                        for (size_t k = 0; k < dst.v.size(); ++k)
                            dst.v[k] += g.v[k];
                    }
                const double inv = 1.0 / double(bsz);
                for (int p = 0; p < m.ps.size(); ++p) {
                    Grid& dst = m.ps[p].grad;
                    for (double& x : dst.v) x *= inv;
                    bad = bad || !dst.all_finite();
                }
            }
            if (bad) {
                // The offending step is never applied; the parameters still
                // hold the last good state, which last.wmck captures below.
                res.aborted_nonfinite = true;
                stop = true;
                break;
            }
            adam_step(m.ps, opt, lr);
            m.ps.quantize_to_f32();
            ++res.steps_run;
            if (tc.max_steps > 0 && res.steps_run >= tc.max_steps) stop = true;
        }

        const bool last_epoch = epoch == tc.epochs - 1;
        if (res.aborted_nonfinite) break;
        if (epoch % tc.eval_every != 0 && !stop && !last_epoch) continue;

        const EvalStats tr = eval_pairs(m, data.train);
        emit(metric_row(epoch, "train", tr));
        EvalStats te{};
        const bool has_test = !data.test.empty();
        if (has_test) {
            te = eval_pairs(m, data.test);
            emit(metric_row(epoch, "test", te));
        }
        const double sel = has_test ? te.psnr_db : tr.psnr_db;
        if (sel > res.best_psnr) {
            res.best_psnr = sel;
            res.best_epoch = epoch;
            if (!res.best_path.empty())
                save_checkpoint(res.best_path, m, &opt, order.serialize());
        }
        if (target > 0.0 && tr.psnr_db >= target) stop = true;
    }

    if (!res.last_path.empty()) {
        save_checkpoint(res.last_path, m, &opt, order.serialize());
        if (res.best_epoch < 0) res.best_path.clear();
    }
    return res;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'W', 'M', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& b, std::uint16_t x) {
    b.push_back(char(x & 0xff));
    b.push_back(char((x >> 8) & 0xff));
}
void put_u32(std::string& b, std::uint32_t x) {
    for (int i = 0; i < 4; ++i) b.push_back(char((x >> (8 * i)) & 0xff));
}
void put_u64(std::string& b, std::uint64_t x) {
    for (int i = 0; i < 8; ++i) b.push_back(char((x >> (8 * i)) & 0xff));
}
void put_f32(std::string& b, float x) { put_u32(b, std::bit_cast<std::uint32_t>(x)); }
void put_f64(std::string& b, double x) { put_u64(b, std::bit_cast<std::uint64_t>(x)); }

struct Cursor {
    const std::string& s;
    size_t off = 0;

    void need(size_t n, const char* what) {
        require(off + n <= s.size(),
                std::string("checkpoint: truncated ") + what);
    }
    std::uint64_t bits(int nbytes, const char* what) {
        need(size_t(nbytes), what);
        std::uint64_t x = 0;
        for (int i = 0; i < nbytes; ++i)
            x |= std::uint64_t(std::uint8_t(s[off + size_t(i)])) << (8 * i);
        off += size_t(nbytes);
        return x;
    }
    std::uint16_t u16(const char* w) { return std::uint16_t(bits(2, w)); }
    std::uint32_t u32(const char* w) { return std::uint32_t(bits(4, w)); }
    std::uint64_t u64(const char* w) { return bits(8, w); }
    double f32(const char* w) {
        return double(std::bit_cast<float>(std::uint32_t(bits(4, w))));
    }
    double f64(const char* w) { return std::bit_cast<double>(bits(8, w)); }
    std::string str(size_t n, const char* what) {
        need(n, what);
        std::string r = s.substr(off, n);
        off += n;
        return r;
    }
};

bool f32_exact(const Grid& g) {
    for (double x : g.v)
        if (double(float(x)) != x) return false;
    return true;
}

void put_shape(std::string& b, const Shape& s) {
    put_u32(b, std::uint32_t(s.b));
    put_u32(b, std::uint32_t(s.c));
    put_u32(b, std::uint32_t(s.h));
    put_u32(b, std::uint32_t(s.w));
}

}  // namespace

void save_checkpoint(const std::string& path, const WmsrModel& m,
                     const OptimState* opt, const std::string& rng_state) {
    validate(m.cfg);
    if (opt)
        require(opt->initialized() && int(opt->m.size()) == m.ps.size(),
                "save_checkpoint: optimizer state does not match the model");

    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    buf.push_back(char(m.fused ? 1 : 0));
    buf.push_back(char(opt ? 1 : 0));
    const std::string cfg = model_config_text(m.cfg);
    put_u32(buf, std::uint32_t(cfg.size()));
    buf += cfg;
    put_u32(buf, std::uint32_t(rng_state.size()));
    buf += rng_state;

    put_u32(buf, std::uint32_t(m.ps.size()));
    for (int p = 0; p < m.ps.size(); ++p) {
        const ParamStore::Entry& e = m.ps[p];
        put_u32(buf, std::uint32_t(e.name.size()));
        buf += e.name;
        put_shape(buf, e.value.shape);
        const bool exact = f32_exact(e.value);
        buf.push_back(char(exact ? 0 : 1));
        if (exact)
            for (double x : e.value.v) put_f32(buf, float(x));
        else
            for (double x : e.value.v) put_f64(buf, x);
    }
    if (opt) {
        put_u64(buf, std::uint64_t(opt->step));
        put_f64(buf, opt->beta1);
        put_f64(buf, opt->beta2);
        put_f64(buf, opt->eps);
        for (int p = 0; p < m.ps.size(); ++p) {
            for (double x : opt->m[size_t(p)].v) put_f64(buf, x);
            for (double x : opt->v[size_t(p)].v) put_f64(buf, x);
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), "save_checkpoint: cannot open " + path);
    out.write(buf.data(), std::streamsize(buf.size()));
    out.flush();
    require(out.good(), "save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "load_checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string raw = ss.str();

    Cursor c{raw};
    const std::string magic = c.str(4, "magic");
    require(std::memcmp(magic.data(), kMagic, 4) == 0,
            "checkpoint: bad magic in " + path);
    const std::uint16_t ver = c.u16("version");
    require(ver == kVersion,
            "checkpoint: unsupported version " + std::to_string(ver));
    const std::uint64_t fused = c.bits(1, "fused flag");
    require(fused <= 1, "checkpoint: bad fused flag");
    const std::uint64_t has_optim = c.bits(1, "optimizer flag");
    require(has_optim <= 1, "checkpoint: bad optimizer flag");

    const std::string cfg_text = c.str(c.u32("config length"), "config text");
    std::istringstream cs(cfg_text);
    const ModelConfig cfg = parse_model_config(cs);
    const std::string rng_state = c.str(c.u32("rng length"), "rng state");

    CheckpointData out;
    out.model = build_model(cfg, fused != 0);
    out.rng_state = rng_state;
    ParamStore& ps = out.model.ps;

    const std::uint32_t count = c.u32("parameter count");
    require(int(count) == ps.size(),
            "checkpoint: parameter count " + std::to_string(count) +
                " does not match the config's " + std::to_string(ps.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = c.str(c.u32("name length"), "name");
        require(int(i) < ps.size() && ps[int(i)].name == name,
                "checkpoint: unexpected parameter " + name);
        ParamStore::Entry& e = ps[int(i)];
        const int sb = int(c.u32("shape"));
        const int sc = int(c.u32("shape"));
        const int sh = int(c.u32("shape"));
        const int sw = int(c.u32("shape"));
        const Shape s(sb, sc, sh, sw);
        require(s == e.value.shape, "checkpoint: shape mismatch for " + name +
                                        ": " + s.str() + " vs " +
                                        e.value.shape.str());
        const std::uint64_t dtype = c.bits(1, "dtype");
        require(dtype <= 1, "checkpoint: bad dtype for " + name);
        if (dtype == 0)
            for (double& x : e.value.v) x = c.f32("tensor data");
        else
            for (double& x : e.value.v) x = c.f64("tensor data");
    }
    if (has_optim) {
        out.has_optim = true;
        out.optim.init(ps);
        out.optim.step = std::int64_t(c.u64("optimizer step"));
        out.optim.beta1 = c.f64("beta1");
        out.optim.beta2 = c.f64("beta2");
        out.optim.eps = c.f64("epsilon");
        for (int p = 0; p < ps.size(); ++p) {
            for (double& x : out.optim.m[size_t(p)].v) x = c.f64("moment data");
            for (double& x : out.optim.v[size_t(p)].v) x = c.f64("moment data");
        }
    }
    require(c.off == raw.size(), "checkpoint: trailing bytes in " + path);
    return out;
}

}  // namespace wmsr
