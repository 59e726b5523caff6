#include "flow/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

namespace flow::kern {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(T) * static_cast<size_t>(m) * n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(T) * static_cast<size_t>(m) * n);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = a[static_cast<size_t>(p) * m + i];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + static_cast<size_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

template <typename T>
void im2col(const T* in, T* col, int c, int h, int w, int kh, int kw, int stride, int pad_y,
            int pad_x, int ho, int wo) {
    const int out_hw = ho * wo;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const T* plane = in + static_cast<size_t>(ch) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* dst = col + (static_cast<size_t>(ch) * kh * kw + ky * kw + kx) * out_hw;
                for (int oy = 0; oy < ho; ++oy) {
                    const int sy = oy * stride - pad_y + ky;
                    if (sy < 0 || sy >= h) {
                        for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = T(0);
                        continue;
                    }
                    const T* srow = plane + static_cast<size_t>(sy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int sx = ox * stride - pad_x + kx;
                        dst[oy * wo + ox] = (sx >= 0 && sx < w) ? srow[sx] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, int b, int c, int h, int wd, int o,
                int kh, int kw, int stride, int pad_y, int pad_x) {
    const int ho = conv_out_extent(h, kh, stride, pad_y);
    const int wo = conv_out_extent(wd, kw, stride, pad_x);
    const int ckk = c * kh * kw;
    const int ohw = ho * wo;
    std::vector<T> col(static_cast<size_t>(ckk) * ohw);
    for (int bi = 0; bi < b; ++bi) {
        im2col(in + static_cast<size_t>(bi) * c * h * wd, col.data(), c, h, wd, kh, kw, stride,
               pad_y, pad_x, ho, wo);
        T* outb = out + static_cast<size_t>(bi) * o * ohw;
        matmul(w, col.data(), outb, o, ckk, ohw);
        if (bias) {
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < o; ++oc) {
                T* dst = outb + static_cast<size_t>(oc) * ohw;
                const T bv = bias[oc];
                for (int i = 0; i < ohw; ++i) dst[i] += bv;
            }
        }
    }
}

template <typename T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, int b, int c, int h, int wd, int o, int kh,
                      int kw, int stride, int pad_y, int pad_x) {
    const int ho = conv_out_extent(h, kh, stride, pad_y);
    const int wo = conv_out_extent(wd, kw, stride, pad_x);
#pragma omp parallel for collapse(2) schedule(static)
    for (int bi = 0; bi < b; ++bi) {
        for (int ch = 0; ch < c; ++ch) {
            const size_t gin_base = (static_cast<size_t>(bi) * c + ch) * h * wd;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < wd; ++x) {
                    T acc = 0;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int ny = y + pad_y - ky;
                        if (ny < 0 || ny % stride != 0) continue;
                        const int oy = ny / stride;
                        if (oy >= ho) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int nx = x + pad_x - kx;
                            if (nx < 0 || nx % stride != 0) continue;
                            const int ox = nx / stride;
                            if (ox >= wo) continue;
                            for (int oc = 0; oc < o; ++oc) {
                                acc += gout[((static_cast<size_t>(bi) * o + oc) * ho + oy) * wo +
                                            ox] *
                                       w[((static_cast<size_t>(oc) * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    gin[gin_base + static_cast<size_t>(y) * wd + x] += acc;
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, int b, int c, int h, int wd, int o,
                       int kh, int kw, int stride, int pad_y, int pad_x) {
    const int ho = conv_out_extent(h, kh, stride, pad_y);
    const int wo = conv_out_extent(wd, kw, stride, pad_x);
    const int ckk = c * kh * kw;
    const int ohw = ho * wo;
    // gw[O, CKK] += gout[O, HW] * col[CKK, HW]^T, accumulated over batch
    std::vector<T> col(static_cast<size_t>(ckk) * ohw);
    std::vector<T> tmp(static_cast<size_t>(o) * ckk);
    for (int bi = 0; bi < b; ++bi) {
        im2col(in + static_cast<size_t>(bi) * c * h * wd, col.data(), c, h, wd, kh, kw, stride,
               pad_y, pad_x, ho, wo);
        matmul_nt(gout + static_cast<size_t>(bi) * o * ohw, col.data(), tmp.data(), o, ohw, ckk);
        const int64_t total = static_cast<int64_t>(o) * ckk;
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < total; ++i) gw[i] += tmp[i];
    }
}

template <typename T>
void conv2d_bwd_bias(const T* gout, T* gbias, int b, int o, int ho, int wo) {
    const int ohw = ho * wo;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < o; ++oc) {
        T acc = 0;
        for (int bi = 0; bi < b; ++bi) {
            const T* src = gout + (static_cast<size_t>(bi) * o + oc) * ohw;
            for (int i = 0; i < ohw; ++i) acc += src[i];
        }
        gbias[oc] += acc;
    }
}

template <typename T>
void avgpool_fwd(const T* in, T* out, int64_t n, int h, int w, int k) {
    const int ho = h / k, wo = w / k;
    const T inv = T(1) / static_cast<T>(k * k);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T* plane = in + i * h * w;
        T* oplane = out + i * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                T acc = 0;
                for (int dy = 0; dy < k; ++dy) {
                    const T* row = plane + static_cast<size_t>(oy * k + dy) * w + ox * k;
                    for (int dx = 0; dx < k; ++dx) acc += row[dx];
                }
                oplane[oy * wo + ox] = acc * inv;
            }
        }
    }
}

template <typename T>
void avgpool_bwd(const T* gout, T* gin, int64_t n, int h, int w, int k) {
    const int ho = h / k, wo = w / k;
    const T inv = T(1) / static_cast<T>(k * k);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T* goplane = gout + i * ho * wo;
        T* giplane = gin + i * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                giplane[static_cast<size_t>(y) * w + x] +=
                    goplane[static_cast<size_t>(y / k) * wo + x / k] * inv;
            }
        }
    }
}

template <typename T>
void bilinear_fwd(const T* field, const T* pts, T* out, int c, int h, int w, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const T px = pts[2 * i], py = pts[2 * i + 1];
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const T fx = px - static_cast<T>(x0), fy = py - static_cast<T>(y0);
        const T w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
        const T w10 = (1 - fx) * fy, w11 = fx * fy;
        const bool in00 = x0 >= 0 && x0 < w && y0 >= 0 && y0 < h;
        const bool in01 = x0 + 1 >= 0 && x0 + 1 < w && y0 >= 0 && y0 < h;
        const bool in10 = x0 >= 0 && x0 < w && y0 + 1 >= 0 && y0 + 1 < h;
        const bool in11 = x0 + 1 >= 0 && x0 + 1 < w && y0 + 1 >= 0 && y0 + 1 < h;
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = field + static_cast<size_t>(ch) * h * w;
            T acc = 0;
            if (in00) acc += w00 * plane[static_cast<size_t>(y0) * w + x0];
            if (in01) acc += w01 * plane[static_cast<size_t>(y0) * w + x0 + 1];
            if (in10) acc += w10 * plane[static_cast<size_t>(y0 + 1) * w + x0];
            if (in11) acc += w11 * plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
            out[static_cast<size_t>(i) * c + ch] = acc;
        }
    }
}

template <typename T>
void bilinear_bwd(const T* field, const T* pts, const T* gout, T* gfield, T* gpts, int c, int h,
                  int w, int n) {
    // gfield is a scatter across points; kept serial so accumulation order
    // (and therefore the result) does not depend on the thread count.
    for (int i = 0; i < n; ++i) {
        const T px = pts[2 * i], py = pts[2 * i + 1];
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const T fx = px - static_cast<T>(x0), fy = py - static_cast<T>(y0);
        const T w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
        const T w10 = (1 - fx) * fy, w11 = fx * fy;
        const bool in00 = x0 >= 0 && x0 < w && y0 >= 0 && y0 < h;
        const bool in01 = x0 + 1 >= 0 && x0 + 1 < w && y0 >= 0 && y0 < h;
        const bool in10 = x0 >= 0 && x0 < w && y0 + 1 >= 0 && y0 + 1 < h;
        const bool in11 = x0 + 1 >= 0 && x0 + 1 < w && y0 + 1 >= 0 && y0 + 1 < h;
        T gx = 0, gy = 0;
        for (int ch = 0; ch < c; ++ch) {
            const T g = gout[static_cast<size_t>(i) * c + ch];
            if (g == T(0)) continue;
            T* gplane = gfield ? gfield + static_cast<size_t>(ch) * h * w : nullptr;
            const T* plane = field + static_cast<size_t>(ch) * h * w;
            T v00 = 0, v01 = 0, v10 = 0, v11 = 0;
            if (in00) {
                v00 = plane[static_cast<size_t>(y0) * w + x0];
                if (gplane) gplane[static_cast<size_t>(y0) * w + x0] += g * w00;
            }
            if (in01) {
                v01 = plane[static_cast<size_t>(y0) * w + x0 + 1];
                if (gplane) gplane[static_cast<size_t>(y0) * w + x0 + 1] += g * w01;
            }
            if (in10) {
                v10 = plane[static_cast<size_t>(y0 + 1) * w + x0];
                if (gplane) gplane[static_cast<size_t>(y0 + 1) * w + x0] += g * w10;
            }
            if (in11) {
                v11 = plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
                if (gplane) gplane[static_cast<size_t>(y0 + 1) * w + x0 + 1] += g * w11;
            }
            // d value / d px = (1-fy)(v01-v00) + fy(v11-v10), likewise for py
            gx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
            gy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
        }
        if (gpts) {
            gpts[2 * i] += gx;
            gpts[2 * i + 1] += gy;
        }
    }
}

template void matmul<float>(const float*, const float*, float*, int, int, int);
template void matmul<double>(const double*, const double*, double*, int, int, int);
template void matmul_tn<float>(const float*, const float*, float*, int, int, int);
template void matmul_tn<double>(const double*, const double*, double*, int, int, int);
template void matmul_nt<float>(const float*, const float*, float*, int, int, int);
template void matmul_nt<double>(const double*, const double*, double*, int, int, int);
template void im2col<float>(const float*, float*, int, int, int, int, int, int, int, int, int, int);
template void im2col<double>(const double*, double*, int, int, int, int, int, int, int, int, int, int);
template void conv2d_fwd<float>(const float*, const float*, const float*, float*, int, int, int,
                                int, int, int, int, int, int, int);
template void conv2d_fwd<double>(const double*, const double*, const double*, double*, int, int,
                                 int, int, int, int, int, int, int, int);
template void conv2d_bwd_input<float>(const float*, const float*, float*, int, int, int, int, int,
                                      int, int, int, int, int);
template void conv2d_bwd_input<double>(const double*, const double*, double*, int, int, int, int,
                                       int, int, int, int, int, int);
template void conv2d_bwd_weight<float>(const float*, const float*, float*, int, int, int, int, int,
                                       int, int, int, int, int);
template void conv2d_bwd_weight<double>(const double*, const double*, double*, int, int, int, int,
                                        int, int, int, int, int, int);
template void conv2d_bwd_bias<float>(const float*, float*, int, int, int, int);
template void conv2d_bwd_bias<double>(const double*, double*, int, int, int, int);
template void avgpool_fwd<float>(const float*, float*, int64_t, int, int, int);
template void avgpool_fwd<double>(const double*, double*, int64_t, int, int, int);
template void avgpool_bwd<float>(const float*, float*, int64_t, int, int, int);
template void avgpool_bwd<double>(const double*, double*, int64_t, int, int, int);
template void bilinear_fwd<float>(const float*, const float*, float*, int, int, int, int);
template void bilinear_fwd<double>(const double*, const double*, double*, int, int, int, int);
template void bilinear_bwd<float>(const float*, const float*, const float*, float*, float*, int,
                                  int, int, int);
template void bilinear_bwd<double>(const double*, const double*, const double*, double*, double*,
                                   int, int, int, int);

}  // namespace flow::kern
