#pragma once

#include <functional>
#include <string>

#include "flow/loss.hpp"
#include "flow/model.hpp"
#include "flow/optim.hpp"
#include "flow/synthetic.hpp"

namespace flow {

struct TrainConfig {
    ModelConfig model;
    OptimConfig optim;
    int image_size = 64;
    MotionKind train_motion = MotionKind::smooth_random_field;
    double max_flow = 8.0;
    double gamma = 0.8;
    bool augment_enabled = false;
    AugmentPolicy aug;
    int val_every = 100;
    int val_count = 8;
    MotionKind val_motion = MotionKind::constant_translation;
    double val_max_flow = 8.0;
    std::string out_dir = ".";
    std::string run_name = "run";
    bool verbose = false;
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    double final_val_epe = 0.0;
    double final_val_f1 = 0.0;
    std::vector<double> loss_history;
};

// deterministic per-purpose stream seeds
uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index);

// held-out validation samples; index-stable for a given seed
template <typename T>
std::vector<SyntheticSampleT<T>> make_validation_set(uint64_t seed, int count, int image_size,
                                                     MotionKind kind, double max_flow);

// mean EPE of the model on a sample set at the given iteration count
template <typename T>
EvalResult evaluate_model(const ModelT<T>& model,
                          const std::vector<SyntheticSampleT<T>>& samples, int iters);

// Full loop: synthetic stream -> unrolled forward -> sequence loss ->
// clipped AdamW with one-cycle lr. Deterministic given the seed. Writes
// `<run_name>.ckpt` and an append-only `<run_name>_metrics.csv`
// (step,loss,epe,f1_all,lr) into out_dir. Aborts with a diagnostic snapshot
// on a non-finite loss.
template <typename T>
TrainResult train(const TrainConfig& cfg);

}  // namespace flow
