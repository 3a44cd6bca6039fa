#include "maunet/attention.hpp"

#include <cmath>
#include <string>

namespace maunet {

template <typename S>
Tensor<S> kaiming_conv_init(int c_out, int c_in, int kh, int kw, RngState& rng) {
    const double fan_in = static_cast<double>(c_in) * kh * kw;
    return random_normal<S>({c_out, c_in, kh, kw}, rng, 0.0, std::sqrt(2.0 / fan_in));
}

namespace {

template <typename S>
void require_feature_map(const Tensor<S>& a, const char* block) {
    if (a.ndim() != 4) {
        throw ShapeError(std::string(block) + ": expected N x C x H x W input, got " +
                         shape_str(a.shape()));
    }
    if (a.dim(1) < 1) {
        throw ShapeError(std::string(block) + ": channel axis 1 must be >= 1");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// channel attention
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> channel_attention_map(GradTape<S>* tape, const Tensor<S>& a) {
    require_feature_map(a, "channel_attention");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor<S> flat = reshape(tape, a, {n, c, h * w});
    Tensor<S> gram = matmul(tape, flat, transpose(tape, flat, {0, 2, 1}));  // [N,C,C]
    // row j holds the weights of all contributing channels i for output j
    return softmax(tape, gram, 2);
}

template <typename S>
Tensor<S> channel_attention(GradTape<S>* tape, const Tensor<S>& a,
                            const ChannelAttentionParams<S>& params) {
    require_feature_map(a, "channel_attention");
    if (params.beta.size() != 1) {
        throw ShapeError("channel_attention: beta must be a scalar tensor, got " +
                         shape_str(params.beta.shape()));
    }
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor<S> flat = reshape(tape, a, {n, c, h * w});
    Tensor<S> weights = channel_attention_map(tape, a);
    Tensor<S> mixed = matmul(tape, weights, flat);                  // [N,C,HW], row j = sum_i x_ji A_i
    Tensor<S> out = add(tape, mul(tape, mixed, params.beta), flat);
    return reshape(tape, out, {n, c, h, w});
}

// ---------------------------------------------------------------------------
// global context
// ---------------------------------------------------------------------------

template <typename S>
GlobalContextParams<S> GlobalContextParams<S>::init(int channels, int ratio, RngState& rng) {
    if (ratio < 1 || channels % ratio != 0) {
        throw ConfigError("global_context: bottleneck ratio " + std::to_string(ratio) +
                          " does not divide " + std::to_string(channels) + " channels");
    }
    const int cr = channels / ratio;
    GlobalContextParams<S> p;
    p.ratio = ratio;
    p.wk_w = kaiming_conv_init<S>(1, channels, 1, 1, rng);
    p.wk_b = Tensor<S>::zeros({1});
    p.wv1_w = kaiming_conv_init<S>(cr, channels, 1, 1, rng);
    p.wv1_b = Tensor<S>::zeros({cr});
    p.ln_gain = Tensor<S>::full({cr, 1, 1}, S(1));
    p.ln_offset = Tensor<S>::zeros({cr, 1, 1});
    p.wv2_w = kaiming_conv_init<S>(channels, cr, 1, 1, rng);
    p.wv2_b = Tensor<S>::zeros({channels});
    return p;
}

namespace {

template <typename S>
void check_context_params(const Tensor<S>& a, const GlobalContextParams<S>& p) {
    require_feature_map(a, "global_context");
    const int c = a.dim(1);
    if (p.ratio < 1 || c % p.ratio != 0) {
        throw ConfigError("global_context: bottleneck ratio " + std::to_string(p.ratio) +
                          " does not divide " + std::to_string(c) + " channels");
    }
    if (p.wk_w.ndim() != 4 || p.wk_w.dim(0) != 1 || p.wk_w.dim(1) != c || p.wk_w.dim(2) != 1 ||
        p.wk_w.dim(3) != 1) {
        throw ShapeError("global_context: wk must be a 1x1 conv C->1, got " +
                         shape_str(p.wk_w.shape()));
    }
}

}  // namespace

template <typename S>
Tensor<S> global_context_weights(GradTape<S>* tape, const Tensor<S>& a,
                                 const GlobalContextParams<S>& params) {
    check_context_params(a, params);
    const int n = a.dim(0), h = a.dim(2), w = a.dim(3);
    Tensor<S> logits = conv2d(tape, a, params.wk_w, params.wk_b, 1, 0);  // [N,1,H,W]
    return softmax(tape, reshape(tape, logits, {n, 1, h * w}), 2);
}

template <typename S>
Tensor<S> global_context_attention(GradTape<S>* tape, const Tensor<S>& a,
                                   const GlobalContextParams<S>& params) {
    check_context_params(a, params);
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);

    Tensor<S> weights = global_context_weights(tape, a, params);          // [N,1,HW]
    Tensor<S> flat = reshape(tape, a, {n, c, h * w});
    Tensor<S> context = matmul(tape, flat, transpose(tape, weights, {0, 2, 1}));  // [N,C,1]
    context = reshape(tape, context, {n, c, 1, 1});

    Tensor<S> bottleneck = conv2d(tape, context, params.wv1_w, params.wv1_b, 1, 0);
    bottleneck = layer_norm(tape, bottleneck, {1, 2, 3}, params.ln_gain, params.ln_offset);
    bottleneck = relu(tape, bottleneck);
    Tensor<S> delta = conv2d(tape, bottleneck, params.wv2_w, params.wv2_b, 1, 0);  // [N,C,1,1]

    // the same transformed context is added at every position
    return add(tape, a, broadcast_spatial(tape, delta, h, w));
}

template <typename S>
Tensor<S> dual_attention(GradTape<S>* tape, const Tensor<S>& a,
                         const ChannelAttentionParams<S>& channel,
                         const GlobalContextParams<S>& context) {
    return add(tape, channel_attention(tape, a, channel),
               global_context_attention(tape, a, context));
}

// ---------------------------------------------------------------------------
// attention gate
// ---------------------------------------------------------------------------

template <typename S>
AttentionGateParams<S> AttentionGateParams<S>::init(int c_skip, int c_gate, RngState& rng) {
    const int f_int = std::max(c_skip / 2, 1);
    AttentionGateParams<S> p;
    p.wx_w = kaiming_conv_init<S>(f_int, c_skip, 1, 1, rng);
    p.wg_w = kaiming_conv_init<S>(f_int, c_gate, 1, 1, rng);
    p.psi_w = kaiming_conv_init<S>(1, f_int, 1, 1, rng);
    p.psi_b = Tensor<S>::zeros({1});
    return p;
}

template <typename S>
Tensor<S> attention_gate_coefficients(GradTape<S>* tape, const Tensor<S>& skip,
                                      const Tensor<S>& gate,
                                      const AttentionGateParams<S>& params) {
    require_feature_map(skip, "attention_gate");
    require_feature_map(gate, "attention_gate");
    const int h = skip.dim(2), w = skip.dim(3);
    if (gate.dim(0) != skip.dim(0)) {
        throw ShapeError("attention_gate: batch axis 0 mismatch: skip " +
                         shape_str(skip.shape()) + " vs gate " + shape_str(gate.shape()));
    }
    if (gate.dim(2) * 2 != h || gate.dim(3) * 2 != w) {
        throw ShapeError("attention_gate: gate spatial axes 2,3 must be exactly half the skip's: "
                         "skip " + shape_str(skip.shape()) + " vs gate " + shape_str(gate.shape()));
    }

    Tensor<S> projected_skip = decimate2(tape, conv2d_nobias(tape, skip, params.wx_w, 1, 0));
    Tensor<S> projected_gate = conv2d_nobias(tape, gate, params.wg_w, 1, 0);
    Tensor<S> q = relu(tape, add(tape, projected_skip, projected_gate));
    Tensor<S> alpha_small = sigmoid(tape, conv2d(tape, q, params.psi_w, params.psi_b, 1, 0));
    return bilinear_upsample(tape, alpha_small, h, w);  // [N,1,H,W]
}

template <typename S>
Tensor<S> attention_gate(GradTape<S>* tape, const Tensor<S>& skip, const Tensor<S>& gate,
                         const AttentionGateParams<S>& params) {
    Tensor<S> alpha = attention_gate_coefficients(tape, skip, gate, params);
    return mul(tape, skip, broadcast_channel(tape, alpha, skip.dim(1)));
}

#define MAUNET_INSTANTIATE_ATTENTION(S)                                                     \
    template struct GlobalContextParams<S>;                                                 \
    template struct AttentionGateParams<S>;                                                 \
    template Tensor<S> channel_attention_map(GradTape<S>*, const Tensor<S>&);               \
    template Tensor<S> channel_attention(GradTape<S>*, const Tensor<S>&,                    \
                                         const ChannelAttentionParams<S>&);                 \
    template Tensor<S> global_context_weights(GradTape<S>*, const Tensor<S>&,               \
                                              const GlobalContextParams<S>&);               \
    template Tensor<S> global_context_attention(GradTape<S>*, const Tensor<S>&,             \
                                                const GlobalContextParams<S>&);             \
    template Tensor<S> dual_attention(GradTape<S>*, const Tensor<S>&,                       \
                                      const ChannelAttentionParams<S>&,                     \
                                      const GlobalContextParams<S>&);                       \
    template Tensor<S> attention_gate_coefficients(GradTape<S>*, const Tensor<S>&,          \
                                                   const Tensor<S>&,                        \
                                                   const AttentionGateParams<S>&);          \
    template Tensor<S> attention_gate(GradTape<S>*, const Tensor<S>&, const Tensor<S>&,     \
                                      const AttentionGateParams<S>&);                       \
    template Tensor<S> kaiming_conv_init<S>(int, int, int, int, RngState&);

MAUNET_INSTANTIATE_ATTENTION(float)
MAUNET_INSTANTIATE_ATTENTION(double)
#undef MAUNET_INSTANTIATE_ATTENTION

}  // namespace maunet
