#include "flow/optim.hpp"

#include <cmath>

namespace flow {

double one_cycle_lr(const OptimConfig& cfg, int step) {
    const double peak = cfg.peak_lr;
    const double lo0 = peak / cfg.start_div;
    const double lo1 = peak / cfg.final_div;
    const double warm = std::max(1.0, cfg.warmup_frac * cfg.steps);
    if (step <= warm) return lo0 + (peak - lo0) * (static_cast<double>(step) / warm);
    const double rest = std::max(1.0, cfg.steps - warm);
    const double frac = std::min(1.0, (static_cast<double>(step) - warm) / rest);
    return peak + (lo1 - peak) * frac;
}

template <typename T>
AdamWT<T>::AdamWT(ParamStoreT<T>& params, const OptimConfig& cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, p] : params_.items()) {
        m_.emplace_back(p->data.size(), T(0));
        v_.emplace_back(p->data.size(), T(0));
    }
}

template <typename T>
void AdamWT<T>::step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const T lo = static_cast<T>(cfg_.clip_lo), hi = static_cast<T>(cfg_.clip_hi);
    const auto& items = params_.items();
#pragma omp parallel for schedule(dynamic)
    for (size_t pi = 0; pi < items.size(); ++pi) {
        auto& p = *items[pi].second;
        if (p.grad.empty()) p.ensure_grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < p.data.size(); ++i) {
            T g = p.grad[i];
            g = g < lo ? lo : (g > hi ? hi : g);
            p.grad[i] = g;  // clipped gradient stays observable
            m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g);
            v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g) * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            p.data[i] -= static_cast<T>(lr * cfg_.weight_decay) * p.data[i];
        }
    }
}

template class AdamWT<float>;
template class AdamWT<double>;

}  // namespace flow
