#include "flow/loss.hpp"

#include <cmath>

namespace flow {

template <typename T>
TensorPtrT<T> sequence_loss(const std::vector<TensorPtrT<T>>& preds, const TensorPtrT<T>& gt,
                            const TensorPtrT<T>& valid, double gamma) {
    if (preds.empty()) throw ContractError("sequence_loss: no predictions");
    if (gamma <= 0.0 || gamma > 1.0) throw ContractError("sequence_loss: gamma must be in (0,1]");
    if (gt->rank() != 3 || gt->shape[0] != 2)
        throw ShapeError("sequence_loss: gt must be [2,H,W]");
    const int h = gt->shape[1], w = gt->shape[2];
    if (valid->rank() != 3 || valid->shape[0] != 1 || valid->shape[1] != h ||
        valid->shape[2] != w)
        throw ShapeError("sequence_loss: valid must be [1,H,W]");
    double count = 0;
    for (const auto v : valid->data) count += static_cast<double>(v);
    if (count == 0) throw ContractError("sequence_loss: empty validity mask");

    // mask replicated over the two flow channels, constant wrt the tape
    auto mask2 = make_tensor<T>({2, h, w});
    std::copy(valid->data.begin(), valid->data.end(), mask2->data.begin());
    std::copy(valid->data.begin(), valid->data.end(),
              mask2->data.begin() + static_cast<int64_t>(h) * w);

    const int n = static_cast<int>(preds.size());
    TensorPtrT<T> total;
    for (int i = 0; i < n; ++i) {
        if (preds[static_cast<size_t>(i)]->shape != gt->shape)
            throw ShapeError("sequence_loss: prediction extents differ from gt");
        auto diff = absval(sub(preds[static_cast<size_t>(i)], gt));
        auto masked = mul(diff, mask2);
        auto term = scale(sum(masked), static_cast<T>(1.0 / count));
        const T wgt = static_cast<T>(std::pow(gamma, n - 1 - i));
        auto weighted = scale(term, wgt);
        total = total ? add(total, weighted) : weighted;
    }
    return total;
}

template <typename T>
EvalResult evaluate(const TensorPtrT<T>& pred, const TensorPtrT<T>& gt,
                    const TensorPtrT<T>& valid) {
    if (pred->shape != gt->shape || pred->rank() != 3 || pred->shape[0] != 2)
        throw ShapeError("evaluate: pred and gt must both be [2,H,W]");
    const int64_t npix = static_cast<int64_t>(pred->shape[1]) * pred->shape[2];
    if (valid->numel() != npix) throw ShapeError("evaluate: validity mask extents differ");
    EvalResult r;
    double epe_sum = 0;
    int64_t outliers = 0;
    for (int64_t p = 0; p < npix; ++p) {
        if (valid->data[p] == T(0)) continue;
        ++r.valid_count;
        const double du = static_cast<double>(pred->data[p]) - static_cast<double>(gt->data[p]);
        const double dv =
            static_cast<double>(pred->data[npix + p]) - static_cast<double>(gt->data[npix + p]);
        const double err = std::sqrt(du * du + dv * dv);
        const double gu = static_cast<double>(gt->data[p]);
        const double gv = static_cast<double>(gt->data[npix + p]);
        const double mag = std::sqrt(gu * gu + gv * gv);
        epe_sum += err;
        if (err > 3.0 && err > 0.05 * mag) ++outliers;
        for (size_t b = 0; b < kEpeHistEdges.size(); ++b) {
            if (err <= kEpeHistEdges[b]) {
                ++r.epe_hist[b];
                break;
            }
        }
    }
    if (r.valid_count == 0) throw ContractError("evaluate: empty validity mask");
    r.epe = epe_sum / static_cast<double>(r.valid_count);
    r.f1_all = 100.0 * static_cast<double>(outliers) / static_cast<double>(r.valid_count);
    return r;
}

template TensorPtrT<float> sequence_loss<float>(const std::vector<TensorPtrT<float>>&,
                                                const TensorPtrT<float>&,
                                                const TensorPtrT<float>&, double);
template TensorPtrT<double> sequence_loss<double>(const std::vector<TensorPtrT<double>>&,
                                                  const TensorPtrT<double>&,
                                                  const TensorPtrT<double>&, double);
template EvalResult evaluate<float>(const TensorPtrT<float>&, const TensorPtrT<float>&,
                                    const TensorPtrT<float>&);
template EvalResult evaluate<double>(const TensorPtrT<double>&, const TensorPtrT<double>&,
                                     const TensorPtrT<double>&);

}  // namespace flow
