#pragma once

#include <vector>

#include "maunet/tape.hpp"
#include "maunet/tensor.hpp"

namespace maunet {

// Differentiable kernels. Every op takes the active tape as its first
// argument (nullptr for pure inference), validates shapes up front, computes
// the forward result with double-precision accumulation, verifies the output
// is finite, and records a backward closure when any input lives on the tape.
//
// There is no general broadcasting: binary ops accept identical shapes or a
// single-element scalar tensor. The two broadcasts the attention blocks need
// are explicit ops (broadcast_spatial, broadcast_channel).

// Cross-correlation (no kernel flip), odd kernels, exact output size:
// H' = (H + 2*padding - kh)/stride + 1 must be a positive integer.
template <typename S>
Tensor<S> conv2d(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                 const Tensor<S>& bias, int stride, int padding);

template <typename S>
Tensor<S> conv2d_nobias(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                        int stride, int padding);

// Max over k x k windows; gradient routes to the argmax, first occurrence on
// ties (row-major window scan order).
template <typename S>
Tensor<S> max_pool2d(GradTape<S>* tape, const Tensor<S>& input, int k, int stride);

// Bilinear interpolation, half-pixel (align-corners=false) convention:
// src = (dst + 0.5) * in/out - 0.5, clamped to the valid range. Upsampling
// only; equal target size is the identity.
template <typename S>
Tensor<S> bilinear_upsample(GradTape<S>* tape, const Tensor<S>& input, int out_h, int out_w);

// Max-subtracted softmax along one axis; slices sum to 1.
template <typename S>
Tensor<S> softmax(GradTape<S>* tape, const Tensor<S>& input, int axis);

// Normalizes each slice spanned by `axes` to mean 0 / variance 1 (biased,
// two-pass), then applies the affine gain/offset whose shapes equal the
// normalized dims in ascending axis order.
template <typename S>
Tensor<S> layer_norm(GradTape<S>* tape, const Tensor<S>& input, const std::vector<int>& axes,
                     const Tensor<S>& gain, const Tensor<S>& offset, double eps = 1e-5);

// [m,k] x [k,n] or batched [B,m,k] x [B,k,n].
template <typename S>
Tensor<S> matmul(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> relu(GradTape<S>* tape, const Tensor<S>& x);

template <typename S>
Tensor<S> sigmoid(GradTape<S>* tape, const Tensor<S>& x);

// Identical shapes, or one side a 1-element scalar tensor.
template <typename S>
Tensor<S> add(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> mul(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);

// Multiply by a compile-time constant (not a learnable tensor).
template <typename S>
Tensor<S> scale(GradTape<S>* tape, const Tensor<S>& x, double c);

template <typename S>
Tensor<S> concat(GradTape<S>* tape, const std::vector<Tensor<S>>& parts, int axis);

template <typename S>
Tensor<S> reshape(GradTape<S>* tape, const Tensor<S>& x, Shape shape);

// out.dim(i) == x.dim(perm[i]).
template <typename S>
Tensor<S> transpose(GradTape<S>* tape, const Tensor<S>& x, const std::vector<int>& perm);

// [N,C,1,1] -> [N,C,H,W]; gradient sums over the spatial positions.
template <typename S>
Tensor<S> broadcast_spatial(GradTape<S>* tape, const Tensor<S>& x, int out_h, int out_w);

// [N,1,H,W] -> [N,C,H,W]; gradient sums over the channels.
template <typename S>
Tensor<S> broadcast_channel(GradTape<S>* tape, const Tensor<S>& x, int channels);

// Keep every second row/column starting at (0,0); requires even H,W.
// Composed after a 1x1 convolution this equals the same convolution with
// stride 2.
template <typename S>
Tensor<S> decimate2(GradTape<S>* tape, const Tensor<S>& x);

// Sum of all elements as a [1] tensor.
template <typename S>
Tensor<S> reduce_sum(GradTape<S>* tape, const Tensor<S>& x);

// Throws NumericError if any value is NaN/Inf. Called by every op on its
// output; exposed for modules adding their own tape records.
template <typename S>
void ensure_finite(const std::vector<S>& values, const char* op);

#define MAUNET_EXTERN_OPS(S)                                                                      \
    extern template Tensor<S> conv2d(GradTape<S>*, const Tensor<S>&, const Tensor<S>&,           \
                                     const Tensor<S>&, int, int);                                 \
    extern template Tensor<S> conv2d_nobias(GradTape<S>*, const Tensor<S>&, const Tensor<S>&,    \
                                            int, int);                                            \
    extern template Tensor<S> max_pool2d(GradTape<S>*, const Tensor<S>&, int, int);               \
    extern template Tensor<S> bilinear_upsample(GradTape<S>*, const Tensor<S>&, int, int);        \
    extern template Tensor<S> softmax(GradTape<S>*, const Tensor<S>&, int);                       \
    extern template Tensor<S> layer_norm(GradTape<S>*, const Tensor<S>&, const std::vector<int>&, \
                                         const Tensor<S>&, const Tensor<S>&, double);             \
    extern template Tensor<S> matmul(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);           \
    extern template Tensor<S> relu(GradTape<S>*, const Tensor<S>&);                               \
    extern template Tensor<S> sigmoid(GradTape<S>*, const Tensor<S>&);                            \
    extern template Tensor<S> add(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);              \
    extern template Tensor<S> mul(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);              \
    extern template Tensor<S> scale(GradTape<S>*, const Tensor<S>&, double);                      \
    extern template Tensor<S> concat(GradTape<S>*, const std::vector<Tensor<S>>&, int);           \
    extern template Tensor<S> reshape(GradTape<S>*, const Tensor<S>&, Shape);                     \
    extern template Tensor<S> transpose(GradTape<S>*, const Tensor<S>&, const std::vector<int>&); \
    extern template Tensor<S> broadcast_spatial(GradTape<S>*, const Tensor<S>&, int, int);        \
    extern template Tensor<S> broadcast_channel(GradTape<S>*, const Tensor<S>&, int);             \
    extern template Tensor<S> decimate2(GradTape<S>*, const Tensor<S>&);                          \
    extern template Tensor<S> reduce_sum(GradTape<S>*, const Tensor<S>&);                         \
    extern template void ensure_finite(const std::vector<S>&, const char*);

MAUNET_EXTERN_OPS(float)
MAUNET_EXTERN_OPS(double)
#undef MAUNET_EXTERN_OPS

}  // namespace maunet
