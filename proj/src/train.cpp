#include "flow/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flow/checkpoint.hpp"

namespace flow {

uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index) {
    // splitmix64 over the combined words
    uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ull) ^ (index * 0xbf58476d1ce4e5b9ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

template <typename T>
std::vector<SyntheticSampleT<T>> make_validation_set(uint64_t seed, int count, int image_size,
                                                     MotionKind kind, double max_flow) {
    std::vector<SyntheticSampleT<T>> out;
    MotionParams mp;
    mp.max_mag = max_flow;
    for (int i = 0; i < count; ++i)
        out.push_back(make_synthetic<T>(mix_seed(seed, 0x7a1, static_cast<uint64_t>(i)),
                                        image_size, image_size, kind, mp));
    return out;
}

template <typename T>
EvalResult evaluate_model(const ModelT<T>& model,
                          const std::vector<SyntheticSampleT<T>>& samples, int iters) {
    EvalResult agg;
    double epe_sum = 0, f1_sum = 0;
    for (const auto& s : samples) {
        auto res = model.run(s.image1, s.image2, iters, UpsamplePolicy::last);
        const auto ev = evaluate(res.flows_full.back(), s.flow, s.valid);
        epe_sum += ev.epe;
        f1_sum += ev.f1_all;
        agg.valid_count += ev.valid_count;
        for (size_t b = 0; b < ev.epe_hist.size(); ++b) agg.epe_hist[b] += ev.epe_hist[b];
    }
    agg.epe = epe_sum / static_cast<double>(samples.size());
    agg.f1_all = f1_sum / static_cast<double>(samples.size());
    return agg;
}

template <typename T>
TrainResult train(const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string ckpt_path = cfg.out_dir + "/" + cfg.run_name + ".ckpt";
    const std::string log_path = cfg.out_dir + "/" + cfg.run_name + "_metrics.csv";

    auto model = ModelT<T>::build(cfg.model, cfg.optim.seed);
    AdamWT<T> opt(model.params, cfg.optim);
    Rng run_rng(mix_seed(cfg.optim.seed, 0x5eed, 0));

    auto val_set = make_validation_set<T>(cfg.optim.seed, cfg.val_count, cfg.image_size,
                                          cfg.val_motion, cfg.val_max_flow);

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw IoError("train: cannot open metric log: " + log_path);
    if (fs::file_size(log_path) == 0) log << "step,loss,epe,f1_all,lr\n";

    TrainResult result;
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;

    MotionParams mp;
    mp.max_mag = cfg.max_flow;

    double last_epe = 0, last_f1 = 0;
    for (int step = 1; step <= cfg.optim.steps; ++step) {
        opt.zero_grad();
        const double lr = one_cycle_lr(cfg.optim, step);
        double step_loss = 0;
        for (int b = 0; b < cfg.optim.batch_size; ++b) {
            const uint64_t sseed =
                mix_seed(cfg.optim.seed, 0xda7a, static_cast<uint64_t>(step) * 1024 + b);
            auto sample = make_synthetic<T>(sseed, cfg.image_size, cfg.image_size,
                                            cfg.train_motion, mp);
            if (cfg.augment_enabled) {
                Rng arng(mix_seed(cfg.optim.seed, 0xa06, static_cast<uint64_t>(step) * 1024 + b));
                sample = augment(sample, cfg.aug, arng);
            }
            TapeT<T> tape;
            {
                GraphScopeT<T> scope(tape);
                auto fwd = model.run(sample.image1, sample.image2, cfg.model.iters_train,
                                     UpsamplePolicy::all);
                auto loss = sequence_loss(fwd.flows_full, sample.flow, sample.valid, cfg.gamma);
                auto scaled =
                    scale(loss, static_cast<T>(1.0 / cfg.optim.batch_size));
                step_loss += static_cast<double>(loss->data[0]) / cfg.optim.batch_size;
                tape.backward(scaled);
            }
            tape.clear();
        }
        if (!std::isfinite(step_loss)) {
            const std::string snap = cfg.out_dir + "/" + cfg.run_name + "_diverged.ckpt";
            save_checkpoint(snap, model.params, cfg.model.to_text(),
                            static_cast<uint64_t>(step), run_rng.state());
            // runtime failure, not a usage error: surfaces as exit code 1
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                     "; snapshot written to " + snap);
        }
        opt.step(lr);
        result.loss_history.push_back(step_loss);

        char row[160];
        if (step % cfg.val_every == 0 || step == cfg.optim.steps) {
            const auto ev = evaluate_model(model, val_set, cfg.model.iters_train);
            last_epe = ev.epe;
            last_f1 = ev.f1_all;
            std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g\n", step, step_loss, ev.epe,
                          ev.f1_all, lr);
            if (cfg.verbose)
                std::printf("step %5d  loss %.4f  val epe %.3f  f1 %.2f%%  lr %.2e\n", step,
                            step_loss, ev.epe, ev.f1_all, lr);
        } else {
            std::snprintf(row, sizeof(row), "%d,%.9g,,,%.9g\n", step, step_loss, lr);
            if (cfg.verbose && step % 25 == 0)
                std::printf("step %5d  loss %.4f  lr %.2e\n", step, step_loss, lr);
        }
        log << row;
    }
    log.flush();

    save_checkpoint(ckpt_path, model.params, cfg.model.to_text(),
                    static_cast<uint64_t>(cfg.optim.steps), run_rng.state());
    result.final_val_epe = last_epe;
    result.final_val_f1 = last_f1;
    return result;
}

#define FLOW_INSTANTIATE_TRAIN(T)                                                             \
    template std::vector<SyntheticSampleT<T>> make_validation_set<T>(uint64_t, int, int,      \
                                                                     MotionKind, double);     \
    template EvalResult evaluate_model<T>(const ModelT<T>&,                                   \
                                          const std::vector<SyntheticSampleT<T>>&, int);      \
    template TrainResult train<T>(const TrainConfig&);

FLOW_INSTANTIATE_TRAIN(float)
FLOW_INSTANTIATE_TRAIN(double)

}  // namespace flow
