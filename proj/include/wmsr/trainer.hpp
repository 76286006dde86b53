#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "wmsr/data.hpp"
#include "wmsr/network.hpp"
#include "wmsr/objective.hpp"
#include "wmsr/tape.hpp"

namespace wmsr {

// Adam accumulators, one moment pair per parameter tensor. Second moments
// stay non-negative by construction.
struct OptimState {
    std::vector<Grid> m, v;
    std::int64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void init(const ParamStore& ps);
    bool initialized() const { return !m.empty(); }
};

// One bias-corrected Adam update from ps.grad. State is untouched and an
// exception raised if any gradient is non-finite.
void adam_step(ParamStore& ps, OptimState& st, double lr);

// Piecewise cosine decay: within each 20-epoch segment the rate anneals from
// the segment-start value to half of it, and segments start at
// base * 2^-(epoch/20). Continuous at boundaries: lr(20k) = base * 2^-k.
double lr_schedule(int epoch, double base_lr = 1e-3);

struct TrainConfig {
    int epochs = 100;
    int batch = 4;
    double base_lr = 1e-3;
    bool use_schedule = true;  // false = constant base_lr (smoke tests)
    LossWeights loss{};
    std::uint64_t seed = 0;
    int threads = 1;     // per-sample tapes; grads merge in sample order
    int eval_every = 1;  // epochs between metric evaluations
    std::string out_dir;           // empty = no checkpoint/metric files
    int max_steps = 0;             // 0 = no cap
    double target_train_psnr = 0;  // >0 = stop once train PSNR reaches it
    std::ostream* echo = nullptr;  // stream metric rows as they are produced
};

struct TrainResult {
    std::vector<std::string> metric_rows;  // "epoch,split,psnr_db,ssim"
    double best_psnr = -1.0;               // selection metric (test split,
    int best_epoch = -1;                   //  train split when test is empty)
    int steps_run = 0;
    bool aborted_nonfinite = false;
    std::string best_path, last_path;  // set when out_dir is given
};

struct EvalStats {
    double psnr_db = 0.0, ssim = 0.0;
    int n = 0;
};

// Values clipped into [0, 1]; metrics and GridFile emission both run on
// clipped predictions.
Grid clamp01(Grid g);

// Mean per-patch PSNR/SSIM of clamp01(infer(lr)) against hr.
EvalStats eval_pairs(const WmsrModel& m, const std::vector<PatchPair>& pairs);

// Mini-batch Adam on total_loss. Deterministic for a fixed seed and thread
// count (grads merge in sample order, so thread count does not change sums).
// Parameters round through float32 after every step, keeping checkpoint
// save/load an exact identity. Non-finite losses or gradients abort training
// and leave the last good parameters in place.
TrainResult train(WmsrModel& m, const PairSets& data, const TrainConfig& tc);

// Binary checkpoint: config text, every parameter tensor in registration
// order, optional optimizer state, optional RNG state. Tensors that are
// exactly float32-representable are stored as f32 (the normal case for
// trained weights); others (fused gate kernels) as f64, tagged per tensor.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const WmsrModel& m,
                     const OptimState* opt = nullptr,
                     const std::string& rng_state = "");

struct CheckpointData {
    WmsrModel model;
    bool has_optim = false;
    OptimState optim;
    std::string rng_state;
};

CheckpointData load_checkpoint(const std::string& path);

}  // namespace wmsr
