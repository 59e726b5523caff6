#pragma once

#include <cstdint>

// Numeric cores shared by the autodiff ops. flow::kern holds the OpenMP
// implementations used everywhere; flow::ref holds plain serial loops kept
// as the reference the tests and the benchmark compare against. The two
// namespaces share signatures and nothing else.
//
// All kernels write each output element from exactly one thread, so results
// are bit-identical across runs and thread counts.

namespace flow::kern {

// C[M,N] = A[M,K] * B[K,N]
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n);

// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n);

// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n);

// col[C*kh*kw, Ho*Wo] from in[C,H,W], zero padding
template <typename T>
void im2col(const T* in, T* col, int c, int h, int w, int kh, int kw, int stride, int pad_y,
            int pad_x, int ho, int wo);

// in[B,C,H,W] (*) w[O,C,kh,kw] + bias[O] -> out[B,O,Ho,Wo]
template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, int b, int c, int h, int wd, int o,
                int kh, int kw, int stride, int pad_y, int pad_x);

// gather form: each input cell sums the output grads that read it
template <typename T>
void conv2d_bwd_input(const T* gout, const T* w, T* gin, int b, int c, int h, int wd, int o, int kh,
                      int kw, int stride, int pad_y, int pad_x);

template <typename T>
void conv2d_bwd_weight(const T* gout, const T* in, T* gw, int b, int c, int h, int wd, int o,
                       int kh, int kw, int stride, int pad_y, int pad_x);

template <typename T>
void conv2d_bwd_bias(const T* gout, T* gbias, int b, int o, int ho, int wo);

// mean over k*k blocks of the last two dims; leading dims flattened into n
template <typename T>
void avgpool_fwd(const T* in, T* out, int64_t n, int h, int w, int k);

template <typename T>
void avgpool_bwd(const T* gout, T* gin, int64_t n, int h, int w, int k);

// out[N,C] = bilinear samples of field[C,H,W] at points[N,2] (x,y),
// out-of-frame neighbors contribute zero
template <typename T>
void bilinear_fwd(const T* field, const T* pts, T* out, int c, int h, int w, int n);

// accumulates into gfield (serial scatter) and gpts
template <typename T>
void bilinear_bwd(const T* field, const T* pts, const T* gout, T* gfield, T* gpts, int c, int h,
                  int w, int n);

}  // namespace flow::kern

namespace flow::ref {

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n);

template <typename T>
void conv2d_fwd(const T* in, const T* w, const T* bias, T* out, int b, int c, int h, int wd, int o,
                int kh, int kw, int stride, int pad_y, int pad_x);

template <typename T>
void avgpool_fwd(const T* in, T* out, int64_t n, int h, int w, int k);

template <typename T>
void bilinear_fwd(const T* field, const T* pts, T* out, int c, int h, int w, int n);

// all-pairs feature correlation, quadruple loop:
// vol[i,j,k,l] = scale * sum_h f1[h,i,j]*f2[h,k,l]
template <typename T>
void corr_volume(const T* f1, const T* f2, T* vol, int d, int h1, int w1, int h2, int w2, T scale);

}  // namespace flow::ref

namespace flow {
inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}
}  // namespace flow
