#pragma once

#include "flow/params.hpp"

namespace flow {

struct OptimConfig {
    double peak_lr = 4e-4;
    double weight_decay = 1e-5;  // decoupled
    double clip_lo = -1.0, clip_hi = 1.0;
    int steps = 2000;
    int batch_size = 1;
    uint64_t seed = 1234;
    double warmup_frac = 0.05;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double start_div = 25.0, final_div = 100.0;  // one-cycle endpoints
};

// one-cycle: linear warmup to peak over warmup_frac, linear anneal after
double one_cycle_lr(const OptimConfig& cfg, int step);

// Adam moments with decoupled weight decay. step() clips gradients
// elementwise into [clip_lo, clip_hi] in place first, so the grads left on
// the parameters are the ones the update actually used.
template <typename T>
class AdamWT {
  public:
    AdamWT(ParamStoreT<T>& params, const OptimConfig& cfg);
    void step(double lr);
    void zero_grad() { params_.zero_grads(); }
    int64_t steps_taken() const { return t_; }

  private:
    ParamStoreT<T>& params_;
    OptimConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace flow
