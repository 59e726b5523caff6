#include "flow/kernels.hpp"

#include <cmath>
#include <cstring>

// Naive serial loops, written straight from the operation definitions.
// These are the oracles the parallel kernels are tested against; keep them
// obvious rather than fast.

namespace flow::ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] = acc;
        }
    }
}

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, int b, int c, int h, int wd, int o,
                int kh, int kw, int stride, int pad_y, int pad_x) {
    const int ho = conv_out_extent(h, kh, stride, pad_y);
    const int wo = conv_out_extent(wd, kw, stride, pad_x);
    for (int bi = 0; bi < b; ++bi) {
        for (int oc = 0; oc < o; ++oc) {
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    T acc = bias ? bias[oc] : T(0);
                    for (int ic = 0; ic < c; ++ic) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int sy = oy * stride - pad_y + ky;
                                const int sx = ox * stride - pad_x + kx;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                acc += in[((static_cast<size_t>(bi) * c + ic) * h + sy) * wd + sx] *
                                       w[((static_cast<size_t>(oc) * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((static_cast<size_t>(bi) * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
}

template <typename T>
void avgpool_fwd(const T* in, T* out, int64_t n, int h, int w, int k) {
    const int ho = h / k, wo = w / k;
    for (int64_t i = 0; i < n; ++i) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                T acc = 0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        acc += in[i * h * w + static_cast<size_t>(oy * k + dy) * w + ox * k + dx];
                out[i * ho * wo + static_cast<size_t>(oy) * wo + ox] = acc / static_cast<T>(k * k);
            }
        }
    }
}

template <typename T>
void bilinear_fwd(const T* field, const T* pts, T* out, int c, int h, int w, int n) {
    auto pick = [&](int ch, int y, int x) -> T {
        if (x < 0 || x >= w || y < 0 || y >= h) return T(0);
        return field[(static_cast<size_t>(ch) * h + y) * w + x];
    };
    for (int i = 0; i < n; ++i) {
        const T px = pts[2 * i], py = pts[2 * i + 1];
        const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        const T fx = px - static_cast<T>(x0), fy = py - static_cast<T>(y0);
        for (int ch = 0; ch < c; ++ch) {
            out[static_cast<size_t>(i) * c + ch] = (1 - fx) * (1 - fy) * pick(ch, y0, x0) +
                                                   fx * (1 - fy) * pick(ch, y0, x0 + 1) +
                                                   (1 - fx) * fy * pick(ch, y0 + 1, x0) +
                                                   fx * fy * pick(ch, y0 + 1, x0 + 1);
        }
    }
}

template <typename T>
void corr_volume(const T* f1, const T* f2, T* vol, int d, int h1, int w1, int h2, int w2, T scale) {
    for (int i = 0; i < h1; ++i) {
        for (int j = 0; j < w1; ++j) {
            for (int k = 0; k < h2; ++k) {
                for (int l = 0; l < w2; ++l) {
                    T acc = 0;
                    for (int ch = 0; ch < d; ++ch) {
                        acc += f1[(static_cast<size_t>(ch) * h1 + i) * w1 + j] *
                               f2[(static_cast<size_t>(ch) * h2 + k) * w2 + l];
                    }
                    vol[((static_cast<size_t>(i) * w1 + j) * h2 + k) * w2 + l] = acc * scale;
                }
            }
        }
    }
}

template void matmul<float>(const float*, const float*, float*, int, int, int);
template void matmul<double>(const double*, const double*, double*, int, int, int);
template void conv2d_fwd<float>(const float*, const float*, const float*, float*, int, int, int,
                                int, int, int, int, int, int, int);
template void conv2d_fwd<double>(const double*, const double*, const double*, double*, int, int,
                                 int, int, int, int, int, int, int, int);
template void avgpool_fwd<float>(const float*, float*, int64_t, int, int, int);
template void avgpool_fwd<double>(const double*, double*, int64_t, int, int, int);
template void bilinear_fwd<float>(const float*, const float*, float*, int, int, int, int);
template void bilinear_fwd<double>(const double*, const double*, double*, int, int, int, int);
template void corr_volume<float>(const float*, const float*, float*, int, int, int, int, int,
                                 float);
template void corr_volume<double>(const double*, const double*, double*, int, int, int, int, int,
                                  double);

}  // namespace flow::ref
