#include "flow/correlation.hpp"

#include <cmath>

#include "flow/kernels.hpp"

namespace flow {

GridShape grid_shape_from_string(const std::string& s) {
    if (s == "square") return GridShape::square;
    if (s == "diamond") return GridShape::diamond;
    throw ContractError("unknown grid shape: " + s);
}

std::string to_string(GridShape g) { return g == GridShape::square ? "square" : "diamond"; }

std::vector<std::pair<int, int>> lookup_offsets(const LookupConfig& cfg) {
    std::vector<std::pair<int, int>> offs;
    const int r = cfg.radius;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (cfg.grid == GridShape::square || std::abs(dy) + std::abs(dx) <= r)
                offs.emplace_back(dy, dx);
    return offs;
}

int lookup_points_per_level(const LookupConfig& cfg) {
    const int r = cfg.radius;
    return cfg.grid == GridShape::square ? (2 * r + 1) * (2 * r + 1) : 2 * r * r + 2 * r + 1;
}

template <typename T>
TensorPtrT<T> build_volume_general(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale) {
    if (f1->rank() != 3 || f2->rank() != 3 || f1->shape[0] != f2->shape[0])
        throw ShapeError("build_volume: feature channel counts differ");
    const int d = f1->shape[0];
    const int h1 = f1->shape[1], w1 = f1->shape[2];
    const int h2 = f2->shape[1], w2 = f2->shape[2];
    const int n1 = h1 * w1, n2 = h2 * w2;
    auto out = make_tensor<T>({h1, w1, h2, w2});
    // f1 [D, N1] and f2 [D, N2] flat; C = scale * f1^T f2
    kern::matmul_tn(f1->data.data(), f2->data.data(), out->data.data(), n1, d, n2);
    if (scale != T(1))
        for (auto& v : out->data) v *= scale;
    if (tape_should_record<T>({&f1, &f2})) {
        out->requires_grad = true;
        auto f1c = f1, f2c = f2, oc = out;
        active_tape<T>()->record(out, {f1, f2}, [f1c, f2c, oc, d, n1, n2, scale]() {
            std::vector<T> g(oc->grad);
            if (scale != T(1))
                for (auto& v : g) v *= scale;
            if (f1c->requires_grad) {
                f1c->ensure_grad();
                // dF1[D,N1] = F2[D,N2] * dC^T
                std::vector<T> tmp(static_cast<size_t>(d) * n1);
                kern::matmul_nt(f2c->data.data(), g.data(), tmp.data(), d, n2, n1);
                for (size_t i = 0; i < tmp.size(); ++i) f1c->grad[i] += tmp[i];
            }
            if (f2c->requires_grad) {
                f2c->ensure_grad();
                // dF2[D,N2] = F1[D,N1] * dC[N1,N2]
                std::vector<T> tmp(static_cast<size_t>(d) * n2);
                kern::matmul(f1c->data.data(), g.data(), tmp.data(), d, n1, n2);
                for (size_t i = 0; i < tmp.size(); ++i) f2c->grad[i] += tmp[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> build_volume(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale) {
    if (f1->shape != f2->shape)
        throw ShapeError("build_volume: feature extents differ, " + shape_str(f1->shape) +
                         " vs " + shape_str(f2->shape));
    return build_volume_general(f1, f2, scale);
}

template <typename T>
CorrelationPyramidT<T> build_pyramid(const TensorPtrT<T>& volume, int levels) {
    if (volume->rank() != 4) throw ShapeError("build_pyramid: expected 4D volume");
    if (levels < 1) throw ShapeError("build_pyramid: need at least one level");
    const int h1 = volume->shape[0], w1 = volume->shape[1];
    const int h2 = volume->shape[2], w2 = volume->shape[3];
    const int div = 1 << (levels - 1);
    if (h2 % div != 0 || w2 % div != 0)
        throw ShapeError("build_pyramid: target extents " + shape_str(volume->shape) +
                         " not divisible by " + std::to_string(div) +
                         " (caller pads features first)");
    CorrelationPyramidT<T> pyr;
    pyr.h1 = h1;
    pyr.w1 = w1;
    pyr.h2 = h2;
    pyr.w2 = w2;
    auto level0 = reshape(volume, {h1 * w1, 1, h2, w2});
    pyr.levels.push_back(level0);
    for (int k = 1; k < levels; ++k) pyr.levels.push_back(avg_pool2d(level0, 1 << k));
    return pyr;
}

namespace {

// zero-padded bilinear read of one response image
template <typename T>
inline T bilin_read(const T* img, int h, int w, T px, T py) {
    const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    const T fx = px - static_cast<T>(x0), fy = py - static_cast<T>(y0);
    T acc = 0;
    if (y0 >= 0 && y0 < h) {
        if (x0 >= 0 && x0 < w) acc += (1 - fx) * (1 - fy) * img[y0 * w + x0];
        if (x0 + 1 >= 0 && x0 + 1 < w) acc += fx * (1 - fy) * img[y0 * w + x0 + 1];
    }
    if (y0 + 1 >= 0 && y0 + 1 < h) {
        if (x0 >= 0 && x0 < w) acc += (1 - fx) * fy * img[(y0 + 1) * w + x0];
        if (x0 + 1 >= 0 && x0 + 1 < w) acc += fx * fy * img[(y0 + 1) * w + x0 + 1];
    }
    return acc;
}

struct Tap {
    int idx;  // flat index into the response image, -1 when out of frame
    double weight;
    double dwx, dwy;  // d weight / d px, d weight / d py
};

// the four bilinear taps and their point derivatives
template <typename T>
inline int bilin_taps(int h, int w, T px, T py, Tap taps[4]) {
    const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    const double fx = static_cast<double>(px - static_cast<T>(x0));
    const double fy = static_cast<double>(py - static_cast<T>(y0));
    auto put = [&](int n, int y, int x, double wgt, double dwx, double dwy) {
        taps[n].idx = (y >= 0 && y < h && x >= 0 && x < w) ? y * w + x : -1;
        taps[n].weight = wgt;
        taps[n].dwx = dwx;
        taps[n].dwy = dwy;
    };
    put(0, y0, x0, (1 - fx) * (1 - fy), -(1 - fy), -(1 - fx));
    put(1, y0, x0 + 1, fx * (1 - fy), (1 - fy), -fx);
    put(2, y0 + 1, x0, (1 - fx) * fy, -fy, (1 - fx));
    put(3, y0 + 1, x0 + 1, fx * fy, fy, fx);
    return 4;
}

}  // namespace

template <typename T>
TensorPtrT<T> lookup(const CorrelationPyramidT<T>& pyr, const TensorPtrT<T>& flow,
                     const LookupConfig& cfg) {
    if (flow->rank() != 3 || flow->shape[0] != 2 || flow->shape[1] != pyr.h1 ||
        flow->shape[2] != pyr.w1)
        throw ShapeError("lookup: flow must be [2," + std::to_string(pyr.h1) + "," +
                         std::to_string(pyr.w1) + "]");
    if (cfg.levels > static_cast<int>(pyr.levels.size()))
        throw ShapeError("lookup: pyramid has fewer levels than requested");
    const auto offs = lookup_offsets(cfg);
    const int npts = static_cast<int>(offs.size());
    const int h1 = pyr.h1, w1 = pyr.w1, npix = h1 * w1;
    auto out = make_tensor<T>({cfg.levels * npts, h1, w1});
#pragma omp parallel for schedule(static)
    for (int p = 0; p < npix; ++p) {
        const int i = p / w1, j = p % w1;
        const T u = flow->data[p], v = flow->data[npix + p];
        for (int k = 0; k < cfg.levels; ++k) {
            const auto& lvl = *pyr.levels[k];
            const int hk = lvl.shape[2], wk = lvl.shape[3];
            const T inv = T(1) / static_cast<T>(1 << k);
            const T cx = (static_cast<T>(j) + u) * inv;
            const T cy = (static_cast<T>(i) + v) * inv;
            const T* img = lvl.data.data() + static_cast<size_t>(p) * hk * wk;
            for (int oi = 0; oi < npts; ++oi) {
                out->data[(static_cast<size_t>(k * npts + oi)) * npix + p] =
                    bilin_read(img, hk, wk, cx + static_cast<T>(offs[oi].second),
                               cy + static_cast<T>(offs[oi].first));
            }
        }
    }
    bool rec = tape_should_record<T>({&flow});
    for (const auto& l : pyr.levels)
        if (tape_should_record<T>({&l})) rec = true;
    if (rec) {
        out->requires_grad = true;
        std::vector<TensorPtrT<T>> inputs(pyr.levels.begin(),
                                          pyr.levels.begin() + cfg.levels);
        inputs.push_back(flow);
        auto levels = std::vector<TensorPtrT<T>>(pyr.levels.begin(),
                                                 pyr.levels.begin() + cfg.levels);
        auto fc = flow, oc = out;
        active_tape<T>()->record(out, inputs, [levels, fc, oc, offs, npts, h1, w1, cfg]() {
            const int npix = h1 * w1;
            const bool need_flow = fc->requires_grad;
            if (need_flow) fc->ensure_grad();
            for (int k = 0; k < cfg.levels; ++k)
                if (levels[k]->requires_grad) levels[k]->ensure_grad();
                // each source pixel owns its response-image slice, so the level
                // scatter below is race-free under the pixel-parallel loop
#pragma omp parallel for schedule(static)
            for (int p = 0; p < npix; ++p) {
                const int i = p / w1, j = p % w1;
                const T u = fc->data[p], v = fc->data[npix + p];
                double gu = 0, gv = 0;
                for (int k = 0; k < cfg.levels; ++k) {
                    auto& lvl = *levels[k];
                    const int hk = lvl.shape[2], wk = lvl.shape[3];
                    const T inv = T(1) / static_cast<T>(1 << k);
                    const T cx = (static_cast<T>(j) + u) * inv;
                    const T cy = (static_cast<T>(i) + v) * inv;
                    const T* img = lvl.data.data() + static_cast<size_t>(p) * hk * wk;
                    T* gimg = lvl.requires_grad
                                  ? lvl.grad.data() + static_cast<size_t>(p) * hk * wk
                                  : nullptr;
                    for (int oi = 0; oi < npts; ++oi) {
                        const T g = oc->grad[(static_cast<size_t>(k * npts + oi)) * npix + p];
                        if (g == T(0)) continue;
                        Tap taps[4];
                        bilin_taps(hk, wk, cx + static_cast<T>(offs[oi].second),
                                   cy + static_cast<T>(offs[oi].first), taps);
                        double dx = 0, dy = 0;
                        for (const Tap& t : taps) {
                            if (t.idx < 0) continue;
                            if (gimg) gimg[t.idx] += g * static_cast<T>(t.weight);
                            dx += t.dwx * static_cast<double>(img[t.idx]);
                            dy += t.dwy * static_cast<double>(img[t.idx]);
                        }
                        gu += static_cast<double>(g) * dx * static_cast<double>(inv);
                        gv += static_cast<double>(g) * dy * static_cast<double>(inv);
                    }
                }
                if (need_flow) {
                    fc->grad[p] += static_cast<T>(gu);
                    fc->grad[npix + p] += static_cast<T>(gv);
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> lookup_ondemand(const PooledFeaturesT<T>& pooled, const TensorPtrT<T>& flow,
                              const LookupConfig& cfg) {
    const auto& f1 = pooled.f1;
    const int d = f1->shape[0], h1 = f1->shape[1], w1 = f1->shape[2];
    if (flow->rank() != 3 || flow->shape[0] != 2 || flow->shape[1] != h1 ||
        flow->shape[2] != w1)
        throw ShapeError("lookup_ondemand: flow extents must match source features");
    if (cfg.levels > static_cast<int>(pooled.f2_levels.size()))
        throw ShapeError("lookup_ondemand: pooled set has fewer levels than requested");
    const auto offs = lookup_offsets(cfg);
    const int npts = static_cast<int>(offs.size());
    const int npix = h1 * w1;
    const T scale = pooled.scale;
    auto out = make_tensor<T>({cfg.levels * npts, h1, w1});
#pragma omp parallel for schedule(static)
    for (int p = 0; p < npix; ++p) {
        const int i = p / w1, j = p % w1;
        const T u = flow->data[p], v = flow->data[npix + p];
        for (int k = 0; k < cfg.levels; ++k) {
            const auto& lvl = *pooled.f2_levels[k];
            const int hk = lvl.shape[1], wk = lvl.shape[2];
            const int hw = hk * wk;
            const T inv = T(1) / static_cast<T>(1 << k);
            const T cx = (static_cast<T>(j) + u) * inv;
            const T cy = (static_cast<T>(i) + v) * inv;
            for (int oi = 0; oi < npts; ++oi) {
                Tap taps[4];
                bilin_taps(hk, wk, cx + static_cast<T>(offs[oi].second),
                           cy + static_cast<T>(offs[oi].first), taps);
                // <f1(p), bilinear(f2_k)> * scale, taps folded outside the
                // channel loop
                double acc = 0;
                for (const Tap& t : taps) {
                    if (t.idx < 0 || t.weight == 0.0) continue;
                    double dot = 0;
                    const T* f2base = lvl.data.data() + t.idx;
                    const T* f1base = f1->data.data() + p;
                    for (int ch = 0; ch < d; ++ch)
                        dot += static_cast<double>(f1base[static_cast<size_t>(ch) * npix]) *
                               static_cast<double>(f2base[static_cast<size_t>(ch) * hw]);
                    acc += t.weight * dot;
                }
                out->data[(static_cast<size_t>(k * npts + oi)) * npix + p] =
                    static_cast<T>(acc) * scale;
            }
        }
    }
    bool rec = tape_should_record<T>({&f1, &flow});
    for (const auto& l : pooled.f2_levels)
        if (tape_should_record<T>({&l})) rec = true;
    if (rec) {
        out->requires_grad = true;
        std::vector<TensorPtrT<T>> inputs = {f1, flow};
        std::vector<TensorPtrT<T>> levels(pooled.f2_levels.begin(),
                                          pooled.f2_levels.begin() + cfg.levels);
        for (const auto& l : levels) inputs.push_back(l);
        auto f1c = f1, fc = flow, oc = out;
        active_tape<T>()->record(out, inputs, [f1c, fc, levels, oc, offs, npts, d, h1, w1, scale,
                                               cfg]() {
            const int npix = h1 * w1;
            if (f1c->requires_grad) f1c->ensure_grad();
            if (fc->requires_grad) fc->ensure_grad();
            // f1 and flow grads are pixel-disjoint: parallel
#pragma omp parallel for schedule(static)
            for (int p = 0; p < npix; ++p) {
                const int i = p / w1, j = p % w1;
                const T u = fc->data[p], v = fc->data[npix + p];
                double gu = 0, gv = 0;
                for (int k = 0; k < cfg.levels; ++k) {
                    const auto& lvl = *levels[k];
                    const int hk = lvl.shape[1], wk = lvl.shape[2];
                    const int hw = hk * wk;
                    const T inv = T(1) / static_cast<T>(1 << k);
                    const T cx = (static_cast<T>(j) + u) * inv;
                    const T cy = (static_cast<T>(i) + v) * inv;
                    for (int oi = 0; oi < npts; ++oi) {
                        const T g = oc->grad[(static_cast<size_t>(k * npts + oi)) * npix + p];
                        if (g == T(0)) continue;
                        Tap taps[4];
                        bilin_taps(hk, wk, cx + static_cast<T>(offs[oi].second),
                                   cy + static_cast<T>(offs[oi].first), taps);
                        double dx = 0, dy = 0;
                        for (const Tap& t : taps) {
                            if (t.idx < 0) continue;
                            double dot = 0;
                            const T* f2base = lvl.data.data() + t.idx;
                            const T* f1base = f1c->data.data() + p;
                            for (int ch = 0; ch < d; ++ch)
                                dot += static_cast<double>(
                                           f1base[static_cast<size_t>(ch) * npix]) *
                                       static_cast<double>(f2base[static_cast<size_t>(ch) * hw]);
                            dx += t.dwx * dot;
                            dy += t.dwy * dot;
                            if (f1c->requires_grad) {
                                const double gw = static_cast<double>(g) * t.weight *
                                                  static_cast<double>(scale);
                                T* g1base = f1c->grad.data() + p;
                                for (int ch = 0; ch < d; ++ch)
                                    g1base[static_cast<size_t>(ch) * npix] += static_cast<T>(
                                        gw * static_cast<double>(
                                                 f2base[static_cast<size_t>(ch) * hw]));
                            }
                        }
                        gu += static_cast<double>(g) * dx * static_cast<double>(inv) *
                              static_cast<double>(scale);
                        gv += static_cast<double>(g) * dy * static_cast<double>(inv) *
                              static_cast<double>(scale);
                    }
                }
                if (fc->requires_grad) {
                    fc->grad[p] += static_cast<T>(gu);
                    fc->grad[npix + p] += static_cast<T>(gv);
                }
            }
            // pooled-feature grads overlap across pixels: serial pass keeps
            // the accumulation order fixed
            bool any_level = false;
            for (const auto& l : levels)
                if (l->requires_grad) any_level = true;
            if (!any_level) return;
            for (auto& l : levels)
                if (l->requires_grad) l->ensure_grad();
            for (int p = 0; p < npix; ++p) {
                const int i = p / w1, j = p % w1;
                const T u = fc->data[p], v = fc->data[npix + p];
                for (int k = 0; k < cfg.levels; ++k) {
                    auto& lvl = *levels[k];
                    if (!lvl.requires_grad) continue;
                    const int hk = lvl.shape[1], wk = lvl.shape[2];
                    const int hw = hk * wk;
                    const T inv = T(1) / static_cast<T>(1 << k);
                    const T cx = (static_cast<T>(j) + u) * inv;
                    const T cy = (static_cast<T>(i) + v) * inv;
                    for (int oi = 0; oi < npts; ++oi) {
                        const T g = oc->grad[(static_cast<size_t>(k * npts + oi)) * npix + p];
                        if (g == T(0)) continue;
                        Tap taps[4];
                        bilin_taps(hk, wk, cx + static_cast<T>(offs[oi].second),
                                   cy + static_cast<T>(offs[oi].first), taps);
                        for (const Tap& t : taps) {
                            if (t.idx < 0 || t.weight == 0.0) continue;
                            const double gw =
                                static_cast<double>(g) * t.weight * static_cast<double>(scale);
                            T* g2base = lvl.grad.data() + t.idx;
                            const T* f1base = f1c->data.data() + p;
                            for (int ch = 0; ch < d; ++ch)
                                g2base[static_cast<size_t>(ch) * hw] += static_cast<T>(
                                    gw *
                                    static_cast<double>(f1base[static_cast<size_t>(ch) * npix]));
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

template <typename T>
TensorPtrT<T> pad_features_for_levels(const TensorPtrT<T>& f2, int levels) {
    const int div = 1 << (levels - 1);
    const int h = f2->shape[1], w = f2->shape[2];
    const int ph = (div - h % div) % div, pw = (div - w % div) % div;
    if (ph == 0 && pw == 0) return f2;
    // zero features beyond the frame carry no correlation evidence
    return pad2d_zero(f2, 0, ph, 0, pw);
}

}  // namespace

template <typename T>
CorrelationPyramidT<T> make_pyramid(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale,
                                    int levels) {
    auto f2p = pad_features_for_levels(f2, levels);
    auto vol = build_volume_general(f1, f2p, scale);
    return build_pyramid(vol, levels);
}

template <typename T>
PooledFeaturesT<T> make_pooled(const TensorPtrT<T>& f1, const TensorPtrT<T>& f2, T scale,
                               int levels) {
    PooledFeaturesT<T> pf;
    pf.f1 = f1;
    pf.scale = scale;
    auto f2p = pad_features_for_levels(f2, levels);
    pf.f2_levels.push_back(f2p);
    for (int k = 1; k < levels; ++k) pf.f2_levels.push_back(avg_pool2d(f2p, 1 << k));
    return pf;
}

#define FLOW_INSTANTIATE_CORR(T)                                                               \
    template TensorPtrT<T> build_volume<T>(const TensorPtrT<T>&, const TensorPtrT<T>&, T);     \
    template TensorPtrT<T> build_volume_general<T>(const TensorPtrT<T>&, const TensorPtrT<T>&, \
                                                   T);                                         \
    template CorrelationPyramidT<T> build_pyramid<T>(const TensorPtrT<T>&, int);               \
    template TensorPtrT<T> lookup<T>(const CorrelationPyramidT<T>&, const TensorPtrT<T>&,      \
                                     const LookupConfig&);                                     \
    template TensorPtrT<T> lookup_ondemand<T>(const PooledFeaturesT<T>&, const TensorPtrT<T>&, \
                                              const LookupConfig&);                            \
    template CorrelationPyramidT<T> make_pyramid<T>(const TensorPtrT<T>&, const TensorPtrT<T>&, \
                                                    T, int);                                   \
    template PooledFeaturesT<T> make_pooled<T>(const TensorPtrT<T>&, const TensorPtrT<T>&, T,  \
                                               int);

FLOW_INSTANTIATE_CORR(float)
FLOW_INSTANTIATE_CORR(double)

}  // namespace flow
