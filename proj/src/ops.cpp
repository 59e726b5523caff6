#include "flow/ops.hpp"

#include <cmath>
#include <cstring>

#include "flow/kernels.hpp"

namespace flow {

template <typename T>
bool tape_should_record(std::initializer_list<const TensorPtrT<T>*> inputs) {
    if (!active_tape<T>()) return false;
    for (auto p : inputs)
        if (*p && (*p)->requires_grad) return true;
    return false;
}

namespace {

template <typename T>
void accumulate(TensorPtrT<T>& dst, const std::vector<T>& src, T sign = T(1)) {
    dst->ensure_grad();
    const int64_t n = dst->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) dst->grad[i] += sign * src[i];
}

template <typename T>
void check_same_shape(const TensorPtrT<T>& a, const TensorPtrT<T>& b, const char* op) {
    if (!same_shape(*a, *b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

}  // namespace

template <typename T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    check_same_shape(a, b, "add");
    auto out = make_tensor<T>(a->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    if (tape_should_record<T>({&a, &b})) {
        out->requires_grad = true;
        auto ac = a, bc = b, oc = out;
        active_tape<T>()->record(out, {a, b}, [ac, bc, oc]() {
            if (ac->requires_grad) accumulate(const_cast<TensorPtrT<T>&>(ac), oc->grad);
            if (bc->requires_grad) accumulate(const_cast<TensorPtrT<T>&>(bc), oc->grad);
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sub(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    check_same_shape(a, b, "sub");
    auto out = make_tensor<T>(a->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
    if (tape_should_record<T>({&a, &b})) {
        out->requires_grad = true;
        auto ac = a, bc = b, oc = out;
        active_tape<T>()->record(out, {a, b}, [ac, bc, oc]() {
            if (ac->requires_grad) accumulate(const_cast<TensorPtrT<T>&>(ac), oc->grad);
            if (bc->requires_grad) accumulate(const_cast<TensorPtrT<T>&>(bc), oc->grad, T(-1));
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> mul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_tensor<T>(a->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    if (tape_should_record<T>({&a, &b})) {
        out->requires_grad = true;
        auto ac = a, bc = b, oc = out;
        active_tape<T>()->record(out, {a, b}, [ac, bc, oc]() {
            const int64_t m = oc->numel();
            if (ac->requires_grad) {
                ac->ensure_grad();
                for (int64_t i = 0; i < m; ++i) ac->grad[i] += oc->grad[i] * bc->data[i];
            }
            if (bc->requires_grad) {
                bc->ensure_grad();
                for (int64_t i = 0; i < m; ++i) bc->grad[i] += oc->grad[i] * ac->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> scale(const TensorPtrT<T>& x, T s) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = x->data[i] * s;
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, s]() {
            xc->ensure_grad();
            for (int64_t i = 0; i < oc->numel(); ++i) xc->grad[i] += oc->grad[i] * s;
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> add_scalar(const TensorPtrT<T>& x, T s) {
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = x->data[i] + s;
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(
            out, {x}, [xc, oc]() { accumulate(const_cast<TensorPtrT<T>&>(xc), oc->grad); });
    }
    return out;
}

template <typename T>
TensorPtrT<T> one_minus(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = T(1) - x->data[i];
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            accumulate(const_cast<TensorPtrT<T>&>(xc), oc->grad, T(-1));
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = x->data[i] > T(0) ? x->data[i] : T(0);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            xc->ensure_grad();
            for (int64_t i = 0; i < oc->numel(); ++i)
                if (xc->data[i] > T(0)) xc->grad[i] += oc->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sigmoid(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = T(1) / (T(1) + std::exp(-x->data[i]));
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            xc->ensure_grad();
            for (int64_t i = 0; i < oc->numel(); ++i) {
                const T y = oc->data[i];
                xc->grad[i] += oc->grad[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> tanh(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    const int64_t n = out->numel();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) out->data[i] = std::tanh(x->data[i]);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            xc->ensure_grad();
            for (int64_t i = 0; i < oc->numel(); ++i) {
                const T y = oc->data[i];
                xc->grad[i] += oc->grad[i] * (T(1) - y * y);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> absval(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (int64_t i = 0; i < out->numel(); ++i) out->data[i] = std::abs(x->data[i]);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            xc->ensure_grad();
            for (int64_t i = 0; i < oc->numel(); ++i) {
                const T v = xc->data[i];
                // subgradient 0 at the kink
                xc->grad[i] += oc->grad[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> softmax_lastdim(const TensorPtrT<T>& x) {
    if (x->rank() < 1) throw ShapeError("softmax_lastdim: rank-0 input");
    const int k = x->shape.back();
    const int64_t rows = x->numel() / k;
    auto out = make_tensor<T>(x->shape);
#pragma omp parallel for schedule(static) if (rows > 64)
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = x->data.data() + r * k;
        T* dst = out->data.data() + r * k;
        T mx = src[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, src[i]);
        T denom = 0;
        for (int i = 0; i < k; ++i) {
            dst[i] = std::exp(src[i] - mx);
            denom += dst[i];
        }
        const T inv = T(1) / denom;
        for (int i = 0; i < k; ++i) dst[i] *= inv;
    }
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, k, rows]() {
            xc->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const T* y = oc->data.data() + r * k;
                const T* gy = oc->grad.data() + r * k;
                T dot = 0;
                for (int i = 0; i < k; ++i) dot += gy[i] * y[i];
                T* gx = xc->grad.data() + r * k;
                for (int i = 0; i < k; ++i) gx[i] += y[i] * (gy[i] - dot);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sum(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>({1});
    double acc = 0;  // double accumulator regardless of profile
    for (int64_t i = 0; i < x->numel(); ++i) acc += static_cast<double>(x->data[i]);
    out->data[0] = static_cast<T>(acc);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc]() {
            xc->ensure_grad();
            const T g = oc->grad[0];
            for (int64_t i = 0; i < xc->numel(); ++i) xc->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor<T>({m, n});
    kern::matmul(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    if (tape_should_record<T>({&a, &b})) {
        out->requires_grad = true;
        auto ac = a, bc = b, oc = out;
        active_tape<T>()->record(out, {a, b}, [ac, bc, oc, m, k, n]() {
            if (ac->requires_grad) {
                ac->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(m) * k);
                kern::matmul_nt(oc->grad.data(), bc->data.data(), tmp.data(), m, n, k);
                for (int64_t i = 0; i < ac->numel(); ++i) ac->grad[i] += tmp[i];
            }
            if (bc->requires_grad) {
                bc->ensure_grad();
                std::vector<T> tmp(static_cast<size_t>(k) * n);
                kern::matmul_tn(ac->data.data(), oc->grad.data(), tmp.data(), k, m, n);
                for (int64_t i = 0; i < bc->numel(); ++i) bc->grad[i] += tmp[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> conv2d2(const TensorPtrT<T>& in, const TensorPtrT<T>& w, const TensorPtrT<T>& bias,
                      int stride, int pad_y, int pad_x) {
    if (in->rank() != 4 || w->rank() != 4)
        throw ShapeError("conv2d: expected 4D input and kernel");
    if (in->shape[1] != w->shape[1])
        throw ShapeError("conv2d: input channels " + std::to_string(in->shape[1]) +
                         " != kernel channels " + std::to_string(w->shape[1]));
    if (bias && (bias->rank() != 1 || bias->shape[0] != w->shape[0]))
        throw ShapeError("conv2d: bias extent must match output channels");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const int b = in->shape[0], c = in->shape[1], h = in->shape[2], wd = in->shape[3];
    const int o = w->shape[0], kh = w->shape[2], kw = w->shape[3];
    const int ho = conv_out_extent(h, kh, stride, pad_y);
    const int wo = conv_out_extent(wd, kw, stride, pad_x);
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: output extents collapse to zero");
    auto out = make_tensor<T>({b, o, ho, wo});
    kern::conv2d_fwd(in->data.data(), w->data.data(), bias ? bias->data.data() : nullptr,
                     out->data.data(), b, c, h, wd, o, kh, kw, stride, pad_y, pad_x);
    if (tape_should_record<T>({&in, &w, &bias})) {
        out->requires_grad = true;
        auto ic = in, wc = w, bc = bias, oc = out;
        active_tape<T>()->record(
            out, {in, w, bias},
            [ic, wc, bc, oc, b, c, h, wd, o, kh, kw, stride, pad_y, pad_x, ho, wo]() {
                if (ic->requires_grad) {
                    ic->ensure_grad();
                    kern::conv2d_bwd_input(oc->grad.data(), wc->data.data(), ic->grad.data(), b, c,
                                           h, wd, o, kh, kw, stride, pad_y, pad_x);
                }
                if (wc->requires_grad) {
                    wc->ensure_grad();
                    kern::conv2d_bwd_weight(oc->grad.data(), ic->data.data(), wc->grad.data(), b, c,
                                            h, wd, o, kh, kw, stride, pad_y, pad_x);
                }
                if (bc && bc->requires_grad) {
                    bc->ensure_grad();
                    kern::conv2d_bwd_bias(oc->grad.data(), bc->grad.data(), b, o, ho, wo);
                }
            });
    }
    return out;
}

template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& in, const TensorPtrT<T>& w, const TensorPtrT<T>& bias,
                     int stride, int pad) {
    return conv2d2(in, w, bias, stride, pad, pad);
}

template <typename T>
TensorPtrT<T> conv2d_chw(const TensorPtrT<T>& in, const TensorPtrT<T>& w, const TensorPtrT<T>& bias,
                         int stride, int pad_y, int pad_x) {
    if (in->rank() != 3) throw ShapeError("conv2d_chw: expected [C,H,W]");
    auto b4 = reshape(in, {1, in->shape[0], in->shape[1], in->shape[2]});
    auto out = conv2d2(b4, w, bias, stride, pad_y, pad_x);
    return reshape(out, {out->shape[1], out->shape[2], out->shape[3]});
}

template <typename T>
TensorPtrT<T> avg_pool2d(const TensorPtrT<T>& x, int k) {
    if (x->rank() < 2) throw ShapeError("avg_pool2d: need at least 2 dims");
    const int h = x->shape[x->rank() - 2], w = x->shape[x->rank() - 1];
    if (k < 1 || h % k != 0 || w % k != 0)
        throw ShapeError("avg_pool2d: kernel " + std::to_string(k) + " does not divide " +
                         shape_str(x->shape));
    const int64_t n = x->numel() / (static_cast<int64_t>(h) * w);
    auto oshape = x->shape;
    oshape[x->rank() - 2] = h / k;
    oshape[x->rank() - 1] = w / k;
    auto out = make_tensor<T>(oshape);
    kern::avgpool_fwd(x->data.data(), out->data.data(), n, h, w, k);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, n, h, w, k]() {
            xc->ensure_grad();
            kern::avgpool_bwd(oc->grad.data(), xc->grad.data(), n, h, w, k);
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> bilinear_sample(const TensorPtrT<T>& field, const TensorPtrT<T>& points) {
    if (field->rank() != 3) throw ShapeError("bilinear_sample: field must be [C,H,W]");
    if (points->rank() != 2 || points->shape[1] != 2)
        throw ShapeError("bilinear_sample: points must be [N,2]");
    const int c = field->shape[0], h = field->shape[1], w = field->shape[2];
    const int n = points->shape[0];
    auto out = make_tensor<T>({n, c});
    kern::bilinear_fwd(field->data.data(), points->data.data(), out->data.data(), c, h, w, n);
    if (tape_should_record<T>({&field, &points})) {
        out->requires_grad = true;
        auto fc = field, pc = points, oc = out;
        active_tape<T>()->record(out, {field, points}, [fc, pc, oc, c, h, w, n]() {
            if (fc->requires_grad) fc->ensure_grad();
            if (pc->requires_grad) pc->ensure_grad();
            kern::bilinear_bwd(fc->data.data(), pc->data.data(), oc->grad.data(),
                               fc->requires_grad ? fc->grad.data() : nullptr,
                               pc->requires_grad ? pc->grad.data() : nullptr, c, h, w, n);
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> detach(const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape, x->data);
    out->requires_grad = false;
    return out;
}

template <typename T>
TensorPtrT<T> concat_ch(const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_ch: no inputs");
    const int h = parts[0]->shape[1], w = parts[0]->shape[2];
    int ctotal = 0;
    for (const auto& p : parts) {
        if (p->rank() != 3 || p->shape[1] != h || p->shape[2] != w)
            throw ShapeError("concat_ch: spatial extents differ");
        ctotal += p->shape[0];
    }
    auto out = make_tensor<T>({ctotal, h, w});
    size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out->data.data() + off, p->data.data(), sizeof(T) * p->data.size());
        off += p->data.size();
    }
    bool rec = false;
    for (const auto& p : parts)
        if (tape_should_record<T>({&p})) rec = true;
    if (rec) {
        out->requires_grad = true;
        auto pc = parts;
        auto oc = out;
        active_tape<T>()->record(out, parts, [pc, oc]() {
            size_t o2 = 0;
            for (const auto& p : pc) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < p->data.size(); ++i) p->grad[i] += oc->grad[o2 + i];
                }
                o2 += p->data.size();
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> slice_ch(const TensorPtrT<T>& x, int c0, int c1) {
    if (x->rank() != 3 || c0 < 0 || c1 > x->shape[0] || c0 >= c1)
        throw ShapeError("slice_ch: bad channel range");
    const int h = x->shape[1], w = x->shape[2];
    const size_t plane = static_cast<size_t>(h) * w;
    auto out = make_tensor<T>({c1 - c0, h, w});
    std::memcpy(out->data.data(), x->data.data() + c0 * plane, sizeof(T) * out->data.size());
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, c0, plane]() {
            xc->ensure_grad();
            for (size_t i = 0; i < oc->data.size(); ++i)
                xc->grad[c0 * plane + i] += oc->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> reshape(const TensorPtrT<T>& x, std::vector<int> shape) {
    if (numel_of(shape) != x->numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(x->shape) + " -> " +
                         shape_str(shape));
    auto out = make_tensor<T>(std::move(shape), x->data);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(
            out, {x}, [xc, oc]() { accumulate(const_cast<TensorPtrT<T>&>(xc), oc->grad); });
    }
    return out;
}

template <typename T>
TensorPtrT<T> pad2d_zero(const TensorPtrT<T>& x, int top, int bottom, int left, int right) {
    if (x->rank() != 3) throw ShapeError("pad2d_zero: expected [C,H,W]");
    const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
    const int ho = h + top + bottom, wo = w + left + right;
    auto out = make_tensor<T>({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::memcpy(&out->at(ch, y + top, left), &x->at(ch, y, 0), sizeof(T) * w);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, c, h, w, top, left]() {
            xc->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xdx = 0; xdx < w; ++xdx)
                        xc->grad[(static_cast<size_t>(ch) * h + y) * w + xdx] +=
                            oc->grad[(static_cast<size_t>(ch) * oc->shape[1] + y + top) *
                                         oc->shape[2] +
                                     xdx + left];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> crop2d(const TensorPtrT<T>& x, int top, int left, int h, int w) {
    if (x->rank() != 3) throw ShapeError("crop2d: expected [C,H,W]");
    if (top + h > x->shape[1] || left + w > x->shape[2])
        throw ShapeError("crop2d: window exceeds extents");
    const int c = x->shape[0];
    auto out = make_tensor<T>({c, h, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::memcpy(&out->at(ch, y, 0), &x->at(ch, y + top, left), sizeof(T) * w);
    if (tape_should_record<T>({&x})) {
        out->requires_grad = true;
        auto xc = x, oc = out;
        active_tape<T>()->record(out, {x}, [xc, oc, c, h, w, top, left]() {
            xc->ensure_grad();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xdx = 0; xdx < w; ++xdx)
                        xc->grad[(static_cast<size_t>(ch) * xc->shape[1] + y + top) * xc->shape[2] +
                                 xdx + left] +=
                            oc->grad[(static_cast<size_t>(ch) * h + y) * w + xdx];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> instance_norm2d(const TensorPtrT<T>& x, const TensorPtrT<T>& gamma,
                              const TensorPtrT<T>& beta, T eps) {
    if (x->rank() != 3) throw ShapeError("instance_norm2d: expected [C,H,W]");
    const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
    if (gamma->numel() != c || beta->numel() != c)
        throw ShapeError("instance_norm2d: affine extents must equal channel count");
    const int64_t hw = static_cast<int64_t>(h) * w;
    auto out = make_tensor<T>(x->shape);
    auto xhat = make_tensor<T>(x->shape);  // saved for backward
    std::vector<T> istd(c);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const T* src = x->data.data() + ch * hw;
        double mean = 0;
        for (int64_t i = 0; i < hw; ++i) mean += src[i];
        mean /= static_cast<double>(hw);
        double var = 0;
        for (int64_t i = 0; i < hw; ++i) {
            const double d = src[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        const T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        istd[ch] = is;
        T* xh = xhat->data.data() + ch * hw;
        T* dst = out->data.data() + ch * hw;
        const T g = gamma->data[ch], b = beta->data[ch];
        for (int64_t i = 0; i < hw; ++i) {
            xh[i] = (src[i] - static_cast<T>(mean)) * is;
            dst[i] = g * xh[i] + b;
        }
    }
    if (tape_should_record<T>({&x, &gamma, &beta})) {
        out->requires_grad = true;
        auto xc = x, gc = gamma, bc = beta, oc = out;
        active_tape<T>()->record(out, {x, gamma, beta}, [xc, gc, bc, oc, xhat, istd, c, hw]() {
            for (int ch = 0; ch < c; ++ch) {
                const T* gy = oc->grad.data() + ch * hw;
                const T* xh = xhat->data.data() + ch * hw;
                double sum_gy = 0, sum_gy_xh = 0;
                for (int64_t i = 0; i < hw; ++i) {
                    sum_gy += gy[i];
                    sum_gy_xh += gy[i] * xh[i];
                }
                if (gc->requires_grad) {
                    gc->ensure_grad();
                    gc->grad[ch] += static_cast<T>(sum_gy_xh);
                }
                if (bc->requires_grad) {
                    bc->ensure_grad();
                    bc->grad[ch] += static_cast<T>(sum_gy);
                }
                if (xc->requires_grad) {
                    xc->ensure_grad();
                    T* gx = xc->grad.data() + ch * hw;
                    const T g = gc->data[ch] * istd[ch];
                    const T mg = static_cast<T>(sum_gy / static_cast<double>(hw));
                    const T mgx = static_cast<T>(sum_gy_xh / static_cast<double>(hw));
                    for (int64_t i = 0; i < hw; ++i)
                        gx[i] += g * (gy[i] - mg - xh[i] * mgx);
                }
            }
        });
    }
    return out;
}

#define FLOW_INSTANTIATE_OPS(T)                                                                  \
    template bool tape_should_record<T>(std::initializer_list<const TensorPtrT<T>*>);           \
    template TensorPtrT<T> add<T>(const TensorPtrT<T>&, const TensorPtrT<T>&);                   \
    template TensorPtrT<T> sub<T>(const TensorPtrT<T>&, const TensorPtrT<T>&);                   \
    template TensorPtrT<T> mul<T>(const TensorPtrT<T>&, const TensorPtrT<T>&);                   \
    template TensorPtrT<T> scale<T>(const TensorPtrT<T>&, T);                                    \
    template TensorPtrT<T> add_scalar<T>(const TensorPtrT<T>&, T);                               \
    template TensorPtrT<T> one_minus<T>(const TensorPtrT<T>&);                                   \
    template TensorPtrT<T> relu<T>(const TensorPtrT<T>&);                                        \
    template TensorPtrT<T> sigmoid<T>(const TensorPtrT<T>&);                                     \
    template TensorPtrT<T> tanh<T>(const TensorPtrT<T>&);                                        \
    template TensorPtrT<T> absval<T>(const TensorPtrT<T>&);                                      \
    template TensorPtrT<T> softmax_lastdim<T>(const TensorPtrT<T>&);                             \
    template TensorPtrT<T> sum<T>(const TensorPtrT<T>&);                                         \
    template TensorPtrT<T> matmul<T>(const TensorPtrT<T>&, const TensorPtrT<T>&);                \
    template TensorPtrT<T> conv2d<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,                 \
                                     const TensorPtrT<T>&, int, int);                            \
    template TensorPtrT<T> conv2d2<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,                \
                                      const TensorPtrT<T>&, int, int, int);                      \
    template TensorPtrT<T> conv2d_chw<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,             \
                                         const TensorPtrT<T>&, int, int, int);                   \
    template TensorPtrT<T> avg_pool2d<T>(const TensorPtrT<T>&, int);                             \
    template TensorPtrT<T> bilinear_sample<T>(const TensorPtrT<T>&, const TensorPtrT<T>&);       \
    template TensorPtrT<T> detach<T>(const TensorPtrT<T>&);                                      \
    template TensorPtrT<T> concat_ch<T>(const std::vector<TensorPtrT<T>>&);                      \
    template TensorPtrT<T> slice_ch<T>(const TensorPtrT<T>&, int, int);                          \
    template TensorPtrT<T> reshape<T>(const TensorPtrT<T>&, std::vector<int>);                   \
    template TensorPtrT<T> pad2d_zero<T>(const TensorPtrT<T>&, int, int, int, int);              \
    template TensorPtrT<T> crop2d<T>(const TensorPtrT<T>&, int, int, int, int);                  \
    template TensorPtrT<T> instance_norm2d<T>(const TensorPtrT<T>&, const TensorPtrT<T>&,        \
                                              const TensorPtrT<T>&, T);

FLOW_INSTANTIATE_OPS(float)
FLOW_INSTANTIATE_OPS(double)

}  // namespace flow
