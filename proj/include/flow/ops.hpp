#pragma once

#include <vector>

#include "flow/tape.hpp"
#include "flow/tensor.hpp"

// Differentiable tensor operations. Each op computes its value through the
// flow::kern kernels and, when a tape is active and an input requires
// gradients, records a backward closure.

namespace flow {

template <typename T>
TensorPtrT<T> add(const TensorPtrT<T>& a, const TensorPtrT<T>& b);
template <typename T>
TensorPtrT<T> sub(const TensorPtrT<T>& a, const TensorPtrT<T>& b);
template <typename T>
TensorPtrT<T> mul(const TensorPtrT<T>& a, const TensorPtrT<T>& b);

template <typename T>
TensorPtrT<T> scale(const TensorPtrT<T>& x, T s);
template <typename T>
TensorPtrT<T> add_scalar(const TensorPtrT<T>& x, T s);
// 1 - x, elementwise (GRU blend weight)
template <typename T>
TensorPtrT<T> one_minus(const TensorPtrT<T>& x);

template <typename T>
TensorPtrT<T> relu(const TensorPtrT<T>& x);
template <typename T>
TensorPtrT<T> sigmoid(const TensorPtrT<T>& x);
template <typename T>
TensorPtrT<T> tanh(const TensorPtrT<T>& x);
template <typename T>
TensorPtrT<T> absval(const TensorPtrT<T>& x);

// softmax over the last dimension; rows sum to 1
template <typename T>
TensorPtrT<T> softmax_lastdim(const TensorPtrT<T>& x);

// scalar [1] sum of all elements
template <typename T>
TensorPtrT<T> sum(const TensorPtrT<T>& x);

template <typename T>
TensorPtrT<T> matmul(const TensorPtrT<T>& a, const TensorPtrT<T>& b);

// in [B,C,H,W], w [O,C,kh,kw], bias [O] or null
template <typename T>
TensorPtrT<T> conv2d(const TensorPtrT<T>& in, const TensorPtrT<T>& w, const TensorPtrT<T>& bias,
                     int stride, int pad);

// asymmetric padding variant (1x5 / 5x1 kernels)
template <typename T>
TensorPtrT<T> conv2d2(const TensorPtrT<T>& in, const TensorPtrT<T>& w, const TensorPtrT<T>& bias,
                      int stride, int pad_y, int pad_x);

// [C,H,W] convenience wrapper around the batched op
template <typename T>
TensorPtrT<T> conv2d_chw(const TensorPtrT<T>& in, const TensorPtrT<T>& w,
                         const TensorPtrT<T>& bias, int stride, int pad_y, int pad_x);

// pools the last two dims by k (stride k); extents must divide
template <typename T>
TensorPtrT<T> avg_pool2d(const TensorPtrT<T>& x, int k);

// field [C,H,W], points [N,2] as (x,y); zero padding outside the frame
template <typename T>
TensorPtrT<T> bilinear_sample(const TensorPtrT<T>& field, const TensorPtrT<T>& points);

// same values, gradient flow severed
template <typename T>
TensorPtrT<T> detach(const TensorPtrT<T>& x);

// concatenate [C_i,H,W] tensors along the channel dim
template <typename T>
TensorPtrT<T> concat_ch(const std::vector<TensorPtrT<T>>& parts);

// channels [c0, c1) of a [C,H,W] tensor
template <typename T>
TensorPtrT<T> slice_ch(const TensorPtrT<T>& x, int c0, int c1);

template <typename T>
TensorPtrT<T> reshape(const TensorPtrT<T>& x, std::vector<int> shape);

// zero-pad / crop the last two dims of a [C,H,W] tensor
template <typename T>
TensorPtrT<T> pad2d_zero(const TensorPtrT<T>& x, int top, int bottom, int left, int right);
template <typename T>
TensorPtrT<T> crop2d(const TensorPtrT<T>& x, int top, int left, int h, int w);

// per-channel normalization over H,W with affine parameters, fused backward
template <typename T>
TensorPtrT<T> instance_norm2d(const TensorPtrT<T>& x, const TensorPtrT<T>& gamma,
                              const TensorPtrT<T>& beta, T eps);

template <typename T>
bool tape_should_record(std::initializer_list<const TensorPtrT<T>*> inputs);

}  // namespace flow
