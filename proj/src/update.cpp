#include "flow/update.hpp"

#include <cmath>
#include <limits>

namespace flow {

GruKind gru_kind_from_string(const std::string& s) {
    if (s == "conv3x3") return GruKind::conv3x3;
    if (s == "separable") return GruKind::separable_1x5_5x1;
    if (s == "plain") return GruKind::plain_conv_stack;
    throw ContractError("unknown gru kind: " + s);
}

UpsampleKind upsample_kind_from_string(const std::string& s) {
    if (s == "convex") return UpsampleKind::convex;
    if (s == "bilinear") return UpsampleKind::bilinear;
    throw ContractError("unknown upsample kind: " + s);
}

std::string to_string(GruKind k) {
    switch (k) {
        case GruKind::conv3x3: return "conv3x3";
        case GruKind::separable_1x5_5x1: return "separable";
        default: return "plain";
    }
}

std::string to_string(UpsampleKind k) { return k == UpsampleKind::convex ? "convex" : "bilinear"; }

int motion_feature_channels(const UpdateConfig& cfg) {
    return cfg.corr_branch2 + cfg.flow_branch2 + (cfg.append_raw_flow ? 2 : 0);
}

namespace {

template <typename T>
ConvLayerT<T> mk_conv(ParamStoreT<T>& ps, const std::string& name, int oc, int ic, int kh, int kw,
                      int stride, int py, int px, Rng& rng) {
    ConvLayerT<T> l;
    l.w = ps.create(name + ".w", {oc, ic, kh, kw});
    l.b = ps.create(name + ".b", {oc});
    init_conv_kaiming(l.w, rng);
    l.stride = stride;
    l.pad_y = py;
    l.pad_x = px;
    return l;
}

template <typename T>
GruCellT<T> mk_gru(ParamStoreT<T>& ps, const std::string& name, int hidden, int input, int kh,
                   int kw, Rng& rng) {
    GruCellT<T> g;
    const int py = (kh - 1) / 2, px = (kw - 1) / 2;
    g.wz = mk_conv(ps, name + ".wz", hidden, hidden + input, kh, kw, 1, py, px, rng);
    g.wr = mk_conv(ps, name + ".wr", hidden, hidden + input, kh, kw, 1, py, px, rng);
    g.wh = mk_conv(ps, name + ".wh", hidden, hidden + input, kh, kw, 1, py, px, rng);
    return g;
}

}  // namespace

template <typename T>
UpdateBlockT<T> build_update_block(ParamStoreT<T>& ps, const std::string& prefix,
                                   const UpdateConfig& cfg, Rng& rng) {
    UpdateBlockT<T> blk;
    blk.cfg = cfg;
    blk.corr1 = mk_conv(ps, prefix + ".corr1", cfg.corr_branch1, cfg.corr_channels, 1, 1, 1, 0, 0,
                        rng);
    blk.corr2 = mk_conv(ps, prefix + ".corr2", cfg.corr_branch2, cfg.corr_branch1, 3, 3, 1, 1, 1,
                        rng);
    blk.flow1 = mk_conv(ps, prefix + ".flow1", cfg.flow_branch1, 2, 7, 7, 1, 3, 3, rng);
    blk.flow2 = mk_conv(ps, prefix + ".flow2", cfg.flow_branch2, cfg.flow_branch1, 3, 3, 1, 1, 1,
                        rng);
    const int xin = motion_feature_channels(cfg) + cfg.context_dim;
    switch (cfg.gru_kind) {
        case GruKind::conv3x3:
            blk.grus.push_back(mk_gru(ps, prefix + ".gru", cfg.hidden_dim, xin, 3, 3, rng));
            break;
        case GruKind::separable_1x5_5x1:
            blk.grus.push_back(mk_gru(ps, prefix + ".gruh", cfg.hidden_dim, xin, 1, 5, rng));
            blk.grus.push_back(mk_gru(ps, prefix + ".gruv", cfg.hidden_dim, xin, 5, 1, rng));
            break;
        case GruKind::plain_conv_stack:
            blk.plain1 = mk_conv(ps, prefix + ".plain1", cfg.hidden_dim, cfg.hidden_dim + xin, 3,
                                 3, 1, 1, 1, rng);
            blk.plain2 = mk_conv(ps, prefix + ".plain2", cfg.hidden_dim, cfg.hidden_dim, 3, 3, 1,
                                 1, 1, rng);
            blk.plain3 = mk_conv(ps, prefix + ".plain3", cfg.hidden_dim, cfg.hidden_dim, 3, 3, 1,
                                 1, 1, rng);
            break;
    }
    blk.head1 = mk_conv(ps, prefix + ".head1", cfg.head_width, cfg.hidden_dim, 3, 3, 1, 1, 1, rng);
    blk.head2 = mk_conv(ps, prefix + ".head2", 2, cfg.head_width, 3, 3, 1, 1, 1, rng);
    if (cfg.upsample == UpsampleKind::convex) {
        blk.mask1 = mk_conv(ps, prefix + ".mask1", cfg.mask_width, cfg.hidden_dim, 3, 3, 1, 1, 1,
                            rng);
        blk.mask2 = mk_conv(ps, prefix + ".mask2", 8 * 8 * 9, cfg.mask_width, 1, 1, 1, 0, 0, rng);
    }
    return blk;
}

template <typename T>
TensorPtrT<T> motion_features(const UpdateBlockT<T>& blk, const TensorPtrT<T>& corr_feats,
                              const TensorPtrT<T>& flow) {
    if (corr_feats->shape[1] != flow->shape[1] || corr_feats->shape[2] != flow->shape[2])
        throw ShapeError("motion_features: correlation and flow extents differ");
    auto c = relu(blk.corr2(relu(blk.corr1(corr_feats))));
    auto f = relu(blk.flow2(relu(blk.flow1(flow))));
    std::vector<TensorPtrT<T>> parts = {c, f};
    if (blk.cfg.append_raw_flow) parts.push_back(flow);
    return concat_ch(parts);
}

namespace {

template <typename T>
TensorPtrT<T> gru_cell_step(const GruCellT<T>& g, const TensorPtrT<T>& h,
                            const TensorPtrT<T>& x) {
    auto hx = concat_ch<T>({h, x});
    auto z = sigmoid(g.wz(hx));
    auto r = sigmoid(g.wr(hx));
    auto htilde = tanh(g.wh(concat_ch<T>({mul(r, h), x})));
    return add(mul(one_minus(z), h), mul(z, htilde));
}

}  // namespace

template <typename T>
UpdateStateT<T> gru_step(const UpdateBlockT<T>& blk, const UpdateStateT<T>& state,
                         const TensorPtrT<T>& x_t) {
    if (state.hidden->shape[1] != x_t->shape[1] || state.hidden->shape[2] != x_t->shape[2])
        throw ShapeError("gru_step: hidden and input extents differ");
    UpdateStateT<T> next;
    next.context = state.context;
    if (blk.cfg.gru_kind == GruKind::plain_conv_stack) {
        auto y = relu(blk.plain1(concat_ch<T>({state.hidden, x_t})));
        y = relu(blk.plain2(y));
        next.hidden = relu(blk.plain3(y));
        return next;
    }
    auto h = state.hidden;
    for (const auto& cell : blk.grus) h = gru_cell_step(cell, h, x_t);
    next.hidden = h;
    return next;
}

template <typename T>
TensorPtrT<T> flow_head(const UpdateBlockT<T>& blk, const TensorPtrT<T>& hidden) {
    return blk.head2(relu(blk.head1(hidden)));
}

template <typename T>
TensorPtrT<T> mask_head(const UpdateBlockT<T>& blk, const TensorPtrT<T>& hidden) {
    return blk.mask2(relu(blk.mask1(hidden)));
}

template <typename T>
TensorPtrT<T> upsample_convex(const TensorPtrT<T>& flow, const TensorPtrT<T>& mask_logits,
                              double temperature) {
    if (flow->rank() != 3 || flow->shape[0] != 2)
        throw ShapeError("upsample_convex: flow must be [2,h,w]");
    const int h = flow->shape[1], w = flow->shape[2];
    if (mask_logits->rank() != 3 || mask_logits->shape[0] != 8 * 8 * 9 ||
        mask_logits->shape[1] != h || mask_logits->shape[2] != w)
        throw ShapeError("upsample_convex: mask logits must be [576," + std::to_string(h) + "," +
                         std::to_string(w) + "]");
    // softmax over the 9 neighbor weights per output subpixel; logits laid
    // out channelwise as (sub_y*8 + sub_x)*9 + n
    auto logits = reshape(mask_logits, {8 * 8, 9, h, w});
    if (temperature != 1.0)
        logits = scale(logits, static_cast<T>(1.0 / temperature));
    const int hw = h * w;
    auto weights = make_tensor<T>({8 * 8, 9, h, w});
    {
        const auto& ld = logits->data;
        auto& wd = weights->data;
#pragma omp parallel for collapse(2) schedule(static)
        for (int s = 0; s < 64; ++s) {
            for (int p = 0; p < hw; ++p) {
                const size_t base = static_cast<size_t>(s) * 9 * hw + p;
                T mx = ld[base];
                for (int n = 1; n < 9; ++n)
                    mx = std::max(mx, ld[base + static_cast<size_t>(n) * hw]);
                T denom = 0;
                for (int n = 0; n < 9; ++n) {
                    const T e = std::exp(ld[base + static_cast<size_t>(n) * hw] - mx);
                    wd[base + static_cast<size_t>(n) * hw] = e;
                    denom += e;
                }
                const T inv = T(1) / denom;
                for (int n = 0; n < 9; ++n) wd[base + static_cast<size_t>(n) * hw] *= inv;
            }
        }
    }
    auto out = make_tensor<T>({2, 8 * h, 8 * w});
    const int W = 8 * w;
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    {
        const auto& fd = flow->data;
        const auto& wd = weights->data;
        auto& od = out->data;
#pragma omp parallel for schedule(static)
        for (int p = 0; p < hw; ++p) {
            const int i = p / w, j = p % w;
            for (int sy = 0; sy < 8; ++sy) {
                for (int sx = 0; sx < 8; ++sx) {
                    const int s = sy * 8 + sx;
                    const size_t wbase = static_cast<size_t>(s) * 9 * hw + p;
                    T u = 0, v = 0;
                    for (int n = 0; n < 9; ++n) {
                        const int ni = clampi(i + n / 3 - 1, 0, h - 1);
                        const int nj = clampi(j + n % 3 - 1, 0, w - 1);
                        const T wgt = wd[wbase + static_cast<size_t>(n) * hw];
                        u += wgt * fd[static_cast<size_t>(ni) * w + nj];
                        v += wgt * fd[static_cast<size_t>(hw) + ni * w + nj];
                    }
                    const size_t oy = static_cast<size_t>(8 * i + sy);
                    od[oy * W + 8 * j + sx] = T(8) * u;
                    od[static_cast<size_t>(8 * h) * W + oy * W + 8 * j + sx] = T(8) * v;
                }
            }
        }
    }
    if (tape_should_record<T>({&flow, &logits})) {
        out->requires_grad = true;
        auto fc = flow, lc = logits, wc = weights, oc = out;
        active_tape<T>()->record(out, {flow, logits}, [fc, lc, wc, oc, h, w, clampi]() {
            const int hw = h * w;
            const int W = 8 * w;
            const bool need_flow = fc->requires_grad;
            const bool need_logits = lc->requires_grad;
            if (need_flow) fc->ensure_grad();
            if (need_logits) lc->ensure_grad();
            // gather per coarse pixel: outputs reading coarse (i,j) live in
            // the 8x8 tiles of (i,j) and its 8 neighbors
            for (int p = 0; p < hw; ++p) {
                const int i = p / w, j = p % w;
                for (int sy = 0; sy < 8; ++sy) {
                    for (int sx = 0; sx < 8; ++sx) {
                        const int s = sy * 8 + sx;
                        const size_t wbase = static_cast<size_t>(s) * 9 * hw + p;
                        const size_t oy = static_cast<size_t>(8 * i + sy);
                        const T gu = oc->grad[oy * W + 8 * j + sx];
                        const T gv = oc->grad[static_cast<size_t>(8 * h) * W + oy * W + 8 * j + sx];
                        if (gu == T(0) && gv == T(0)) continue;
                        T dotu = 0, dotv = 0;  // softmax jacobian terms
                        T vals_u[9], vals_v[9];
                        for (int n = 0; n < 9; ++n) {
                            const int ni = clampi(i + n / 3 - 1, 0, h - 1);
                            const int nj = clampi(j + n % 3 - 1, 0, w - 1);
                            vals_u[n] = fc->data[static_cast<size_t>(ni) * w + nj];
                            vals_v[n] = fc->data[static_cast<size_t>(hw) + ni * w + nj];
                            const T wgt = wc->data[wbase + static_cast<size_t>(n) * hw];
                            dotu += wgt * vals_u[n];
                            dotv += wgt * vals_v[n];
                            if (need_flow) {
                                fc->grad[static_cast<size_t>(ni) * w + nj] += T(8) * gu * wgt;
                                fc->grad[static_cast<size_t>(hw) + ni * w + nj] += T(8) * gv * wgt;
                            }
                        }
                        if (need_logits) {
                            for (int n = 0; n < 9; ++n) {
                                const T wgt = wc->data[wbase + static_cast<size_t>(n) * hw];
                                lc->grad[wbase + static_cast<size_t>(n) * hw] +=
                                    T(8) * (gu * wgt * (vals_u[n] - dotu) +
                                            gv * wgt * (vals_v[n] - dotv));
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> upsample_bilinear(const TensorPtrT<T>& flow) {
    if (flow->rank() != 3 || flow->shape[0] != 2)
        throw ShapeError("upsample_bilinear: flow must be [2,h,w]");
    const int h = flow->shape[1], w = flow->shape[2];
    const int H = 8 * h, W = 8 * w;
    auto out = make_tensor<T>({2, H, W});
    const T xmax = static_cast<T>(w - 1), ymax = static_cast<T>(h - 1);
#pragma omp parallel for collapse(2) schedule(static)
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const T cx = std::min(static_cast<T>(x) / T(8), xmax);
            const T cy = std::min(static_cast<T>(y) / T(8), ymax);
            const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
            const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const T fx = cx - static_cast<T>(x0), fy = cy - static_cast<T>(y0);
            for (int c = 0; c < 2; ++c) {
                const T* pl = flow->data.data() + static_cast<size_t>(c) * h * w;
                const T val = (1 - fx) * (1 - fy) * pl[y0 * w + x0] +
                              fx * (1 - fy) * pl[y0 * w + x1] + (1 - fx) * fy * pl[y1 * w + x0] +
                              fx * fy * pl[y1 * w + x1];
                out->data[(static_cast<size_t>(c) * H + y) * W + x] = T(8) * val;
            }
        }
    }
    if (tape_should_record<T>({&flow})) {
        out->requires_grad = true;
        auto fc = flow, oc = out;
        active_tape<T>()->record(out, {flow}, [fc, oc, h, w, H, W, xmax, ymax]() {
            fc->ensure_grad();
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const T cx = std::min(static_cast<T>(x) / T(8), xmax);
                    const T cy = std::min(static_cast<T>(y) / T(8), ymax);
                    const int x0 = static_cast<int>(cx), y0 = static_cast<int>(cy);
                    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                    const T fx = cx - static_cast<T>(x0), fy = cy - static_cast<T>(y0);
                    for (int c = 0; c < 2; ++c) {
                        const T g =
                            T(8) * oc->grad[(static_cast<size_t>(c) * H + y) * W + x];
                        if (g == T(0)) continue;
                        T* gp = fc->grad.data() + static_cast<size_t>(c) * h * w;
                        gp[y0 * w + x0] += (1 - fx) * (1 - fy) * g;
                        gp[y0 * w + x1] += fx * (1 - fy) * g;
                        gp[y1 * w + x0] += (1 - fx) * fy * g;
                        gp[y1 * w + x1] += fx * fy * g;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
IterateResultT<T> iterate(const std::vector<UpdateBlockT<T>>& blocks,
                          const std::function<TensorPtrT<T>(const TensorPtrT<T>&)>& lookup_fn,
                          const TensorPtrT<T>& f0, UpdateStateT<T> state, int n_iters,
                          UpsamplePolicy up_policy) {
    if (n_iters < 1) throw ContractError("iterate: n_iters must be >= 1");
    if (blocks.empty()) throw ContractError("iterate: no update blocks");
    IterateResultT<T> res;
    TensorPtrT<T> f = f0;
    for (int k = 0; k < n_iters; ++k) {
        const auto& blk = blocks[std::min<size_t>(k, blocks.size() - 1)];
        auto f_base = detach(f);  // gradient stops at the current estimate
        auto corr = lookup_fn(f_base);
        auto mf = motion_features(blk, corr, f_base);
        auto x_t = state.context ? concat_ch<T>({mf, state.context}) : mf;
        state = gru_step(blk, state, x_t);
        auto df = flow_head(blk, state.hidden);
        f = add(f_base, df);
        res.flows_eighth.push_back(f);
        const int64_t npix = df->numel() / 2;
        double dn = 0;
        for (int64_t i = 0; i < npix; ++i) {
            const double du = df->data[i], dv = df->data[npix + i];
            dn += std::sqrt(du * du + dv * dv);
        }
        res.step_update_norms.push_back(dn / static_cast<double>(npix));
        const bool want_full = up_policy == UpsamplePolicy::all ||
                               (up_policy == UpsamplePolicy::last && k == n_iters - 1);
        if (want_full) {
            if (blk.cfg.upsample == UpsampleKind::convex) {
                auto logits = mask_head(blk, state.hidden);
                res.flows_full.push_back(
                    upsample_convex(f, logits, blk.cfg.mask_temperature));
            } else {
                res.flows_full.push_back(upsample_bilinear(f));
            }
        }
    }
    res.final_state = state;
    return res;
}

template <typename T>
TensorPtrT<T> warm_start(const TensorPtrT<T>& prev_flow) {
    if (prev_flow->rank() != 3 || prev_flow->shape[0] != 2)
        throw ShapeError("warm_start: flow must be [2,h,w]");
    const int h = prev_flow->shape[1], w = prev_flow->shape[2];
    const int n = h * w;
    auto out = make_tensor<T>(prev_flow->shape);
    std::vector<char> filled(static_cast<size_t>(n), 0);
    std::vector<double> best_mag(static_cast<size_t>(n), 0.0);
    // forward projection votes, row-major scan; smaller |f| wins collisions
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const T u = prev_flow->data[static_cast<size_t>(i) * w + j];
            const T v = prev_flow->data[static_cast<size_t>(n) + i * w + j];
            const int tx = static_cast<int>(std::lround(static_cast<double>(j) + u));
            const int ty = static_cast<int>(std::lround(static_cast<double>(i) + v));
            if (tx < 0 || tx >= w || ty < 0 || ty >= h) continue;
            const int t = ty * w + tx;
            const double mag = std::sqrt(static_cast<double>(u) * u + static_cast<double>(v) * v);
            if (!filled[t] || mag < best_mag[t]) {
                filled[t] = 1;
                best_mag[t] = mag;
                out->data[t] = u;
                out->data[static_cast<size_t>(n) + t] = v;
            }
        }
    }
    // gaps: nearest filled pixel by Euclidean distance, row-major tie-break
    std::vector<int> filled_idx;
    for (int t = 0; t < n; ++t)
        if (filled[t]) filled_idx.push_back(t);
    if (filled_idx.empty()) return out;  // all-gap projection stays zero
#pragma omp parallel for schedule(static)
    for (int t = 0; t < n; ++t) {
        if (filled[t]) continue;
        const int y = t / w, x = t % w;
        int64_t best_d2 = std::numeric_limits<int64_t>::max();
        int best = -1;
        for (int s : filled_idx) {
            const int sy = s / w, sx = s % w;
            const int64_t d2 = static_cast<int64_t>(sy - y) * (sy - y) +
                               static_cast<int64_t>(sx - x) * (sx - x);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = s;
            }
        }
        out->data[t] = out->data[best];
        out->data[static_cast<size_t>(n) + t] = out->data[static_cast<size_t>(n) + best];
    }
    return out;
}

template <typename T>
TensorPtrT<T> downsample_flow_to_eighth(const TensorPtrT<T>& full) {
    if (full->rank() != 3 || full->shape[0] != 2 || full->shape[1] % 8 != 0 ||
        full->shape[2] % 8 != 0)
        throw ShapeError("downsample_flow_to_eighth: extents must divide by 8");
    auto pooled = avg_pool2d(full, 8);
    return scale(pooled, T(1) / T(8));
}

#define FLOW_INSTANTIATE_UPDATE(T)                                                               \
    template struct UpdateBlockT<T>;                                                             \
    template UpdateBlockT<T> build_update_block<T>(ParamStoreT<T>&, const std::string&,          \
                                                   const UpdateConfig&, Rng&);                   \
    template TensorPtrT<T> motion_features<T>(const UpdateBlockT<T>&, const TensorPtrT<T>&,      \
                                              const TensorPtrT<T>&);                             \
    template UpdateStateT<T> gru_step<T>(const UpdateBlockT<T>&, const UpdateStateT<T>&,         \
                                         const TensorPtrT<T>&);                                  \
    template TensorPtrT<T> flow_head<T>(const UpdateBlockT<T>&, const TensorPtrT<T>&);           \
    template TensorPtrT<T> mask_head<T>(const UpdateBlockT<T>&, const TensorPtrT<T>&);           \
    template TensorPtrT<T> upsample_convex<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,        \
                                              double);                                           \
    template TensorPtrT<T> upsample_bilinear<T>(const TensorPtrT<T>&);                           \
    template IterateResultT<T> iterate<T>(                                                       \
        const std::vector<UpdateBlockT<T>>&,                                                     \
        const std::function<TensorPtrT<T>(const TensorPtrT<T>&)>&, const TensorPtrT<T>&,         \
        UpdateStateT<T>, int, UpsamplePolicy);                                                   \
    template TensorPtrT<T> warm_start<T>(const TensorPtrT<T>&);                                  \
    template TensorPtrT<T> downsample_flow_to_eighth<T>(const TensorPtrT<T>&);

FLOW_INSTANTIATE_UPDATE(float)
FLOW_INSTANTIATE_UPDATE(double)

}  // namespace flow
