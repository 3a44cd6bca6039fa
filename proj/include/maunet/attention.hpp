#pragma once

#include "maunet/ops.hpp"
#include "maunet/rng.hpp"
#include "maunet/tape.hpp"
#include "maunet/tensor.hpp"

namespace maunet {

// The three attention mechanisms, built from the differentiable kernels so
// each block is trainable end to end and testable in isolation.

// Channel attention: a C x C affinity map from channel-wise inner products
// reweights the channels, scaled by a learnable scalar that starts at 0 (the
// block is exactly the identity until it learns otherwise).
template <typename S>
struct ChannelAttentionParams {
    Tensor<S> beta;  // [1]

    static ChannelAttentionParams init() {
        return ChannelAttentionParams{Tensor<S>::zeros({1})};
    }
};

// Attention map X in [N,C,C]: X[b][j][i] is the weight with which channel i
// contributes to output channel j; each row normalizes to 1 via softmax.
template <typename S>
Tensor<S> channel_attention_map(GradTape<S>* tape, const Tensor<S>& a);

// out_j = beta * sum_i X[j][i] * A_i + A_j
template <typename S>
Tensor<S> channel_attention(GradTape<S>* tape, const Tensor<S>& a,
                            const ChannelAttentionParams<S>& params);

// Global-context spatial attention: one softmax-weighted spatial aggregate of
// the feature map, passed through a channel bottleneck
// delta = Wv2(ReLU(LN(Wv1(.)))) and added back at every position.
template <typename S>
struct GlobalContextParams {
    int ratio = 4;             // bottleneck ratio r; must divide C
    Tensor<S> wk_w, wk_b;      // 1x1 conv C -> 1
    Tensor<S> wv1_w, wv1_b;    // 1x1 conv C -> C/r
    Tensor<S> ln_gain, ln_offset;  // over the C/r bottleneck, shape [C/r,1,1]
    Tensor<S> wv2_w, wv2_b;    // 1x1 conv C/r -> C

    static GlobalContextParams init(int channels, int ratio, RngState& rng);
};

// Softmax weights over the N_p = H*W positions, shape [N,1,H*W]; sums to 1.
template <typename S>
Tensor<S> global_context_weights(GradTape<S>* tape, const Tensor<S>& a,
                                 const GlobalContextParams<S>& params);

template <typename S>
Tensor<S> global_context_attention(GradTape<S>* tape, const Tensor<S>& a,
                                   const GlobalContextParams<S>& params);

// Parallel fusion: element-wise sum of the channel and global-context outputs.
template <typename S>
Tensor<S> dual_attention(GradTape<S>* tape, const Tensor<S>& a,
                         const ChannelAttentionParams<S>& channel,
                         const GlobalContextParams<S>& context);

// Attention gate on a skip connection: additive attention between the skip
// feature and a gating signal at half resolution. The skip is brought to the
// gate's resolution by a 1x1 projection followed by x2 decimation (the
// stride-2 form of the same projection); coefficients are sigmoid outputs
// resampled back to the skip's resolution.
template <typename S>
struct AttentionGateParams {
    Tensor<S> wx_w;          // 1x1 conv Cskip -> F_int, no bias
    Tensor<S> wg_w;          // 1x1 conv Cgate -> F_int, no bias
    Tensor<S> psi_w, psi_b;  // 1x1 conv F_int -> 1, with bias

    // F_int = max(Cskip/2, 1)
    static AttentionGateParams init(int c_skip, int c_gate, RngState& rng);
};

// Coefficients alpha in (0,1), shape [N,1,H,W] at the skip's resolution.
template <typename S>
Tensor<S> attention_gate_coefficients(GradTape<S>* tape, const Tensor<S>& skip,
                                      const Tensor<S>& gate, const AttentionGateParams<S>& params);

// skip * alpha, alpha broadcast over the skip's channels.
template <typename S>
Tensor<S> attention_gate(GradTape<S>* tape, const Tensor<S>& skip, const Tensor<S>& gate,
                         const AttentionGateParams<S>& params);

// Kaiming fan-in initialization for conv weights [Cout,Cin,kh,kw].
template <typename S>
Tensor<S> kaiming_conv_init(int c_out, int c_in, int kh, int kw, RngState& rng);

#define MAUNET_EXTERN_ATTENTION(S)                                                          \
    extern template struct GlobalContextParams<S>;                                          \
    extern template struct AttentionGateParams<S>;                                          \
    extern template Tensor<S> channel_attention_map(GradTape<S>*, const Tensor<S>&);        \
    extern template Tensor<S> channel_attention(GradTape<S>*, const Tensor<S>&,             \
                                                const ChannelAttentionParams<S>&);          \
    extern template Tensor<S> global_context_weights(GradTape<S>*, const Tensor<S>&,        \
                                                     const GlobalContextParams<S>&);        \
    extern template Tensor<S> global_context_attention(GradTape<S>*, const Tensor<S>&,      \
                                                       const GlobalContextParams<S>&);      \
    extern template Tensor<S> dual_attention(GradTape<S>*, const Tensor<S>&,                \
                                             const ChannelAttentionParams<S>&,              \
                                             const GlobalContextParams<S>&);                \
    extern template Tensor<S> attention_gate_coefficients(GradTape<S>*, const Tensor<S>&,   \
                                                          const Tensor<S>&,                 \
                                                          const AttentionGateParams<S>&);   \
    extern template Tensor<S> attention_gate(GradTape<S>*, const Tensor<S>&,                \
                                             const Tensor<S>&, const AttentionGateParams<S>&); \
    extern template Tensor<S> kaiming_conv_init<S>(int, int, int, int, RngState&);

MAUNET_EXTERN_ATTENTION(float)
MAUNET_EXTERN_ATTENTION(double)
#undef MAUNET_EXTERN_ATTENTION

}  // namespace maunet
