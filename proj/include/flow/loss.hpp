#pragma once

#include <array>
#include <vector>

#include "flow/ops.hpp"

namespace flow {

// Exponentially weighted sequence loss over {f_1..f_N}: per prediction the
// masked mean of the per-pixel L1 norm (|du|+|dv|), weighted gamma^(N-i).
// All tensors full resolution; valid is a [1,H,W] 0/1 mask.
template <typename T>
TensorPtrT<T> sequence_loss(const std::vector<TensorPtrT<T>>& preds, const TensorPtrT<T>& gt,
                            const TensorPtrT<T>& valid, double gamma);

// histogram bin upper edges for the end-point-error distribution, in pixels
inline constexpr std::array<double, 7> kEpeHistEdges = {0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 1e30};

struct EvalResult {
    double epe = 0.0;     // mean L2 endpoint error over valid pixels
    double f1_all = 0.0;  // % of valid pixels with err > 3px and > 5% of |gt|
    std::array<int64_t, 7> epe_hist = {};
    int64_t valid_count = 0;
};

template <typename T>
EvalResult evaluate(const TensorPtrT<T>& pred, const TensorPtrT<T>& gt,
                    const TensorPtrT<T>& valid);

}  // namespace flow
