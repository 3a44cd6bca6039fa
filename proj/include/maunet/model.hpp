#pragma once

#include <string>
#include <utility>
#include <vector>

#include "maunet/attention.hpp"
#include "maunet/configs.hpp"
#include "maunet/param_store.hpp"

namespace maunet {

// U-Net encoder/decoder with attention-gated skips, multi-scale prediction
// fusion over the decoder stages, dual channel/spatial attention on the fused
// feature, and a 1x1 sigmoid head. Each piece is toggled by ModelConfig;
// everything off is a plain U-Net.
//
// The model handle stores indices into its ParamStore; a forward pass binds
// the store to a tape and reads parameters through those indices, so updating
// the store is all an optimizer step needs to do.

struct ConvRef {
    int w = -1;
    int b = -1;
};

struct GateRef {
    int wx_w = -1;
    int wg_w = -1;
    int psi_w = -1;
    int psi_b = -1;
};

struct GlobalContextRef {
    int wk_w = -1, wk_b = -1;
    int wv1_w = -1, wv1_b = -1;
    int ln_gain = -1, ln_offset = -1;
    int wv2_w = -1, wv2_b = -1;
};

template <typename S>
struct MaUnet {
    ModelConfig config;
    ParamStore<S> params;

    struct Stage {
        ConvRef conv1, conv2;
    };
    struct DecoderStage {
        ConvRef up;      // conv after the x2 bilinear upsample
        GateRef gate;    // present when attention gates are enabled
        ConvRef merge;   // conv after the skip concat
    };

    std::vector<Stage> encoder;         // index = resolution level, 0 finest
    Stage bottleneck;
    std::vector<DecoderStage> decoder;  // index = resolution level, 0 finest
    ConvRef fuse;                       // multi-scale fusion conv
    int ca_beta = -1;                   // channel-attention scale
    GlobalContextRef gc;
    ConvRef head;
};

template <typename S>
MaUnet<S> build_model(const ModelConfig& config, RngState rng);

// Upsample every scale to the finest resolution, concatenate on channels and
// convolve once (3x3 -> fused_channels) with ReLU. Scales are ordered coarse
// to fine; the last one defines the target resolution.
template <typename S>
Tensor<S> multi_scale_fuse(GradTape<S>* tape, const std::vector<Tensor<S>>& scales,
                           const Tensor<S>& fuse_w, const Tensor<S>& fuse_b);

// Probability map in (0,1), same spatial size as the input. `bound` is
// params.bind(tape); pass the same tape (or nullptr with raw values).
template <typename S>
Tensor<S> forward_model(const MaUnet<S>& model, GradTape<S>* tape,
                        const std::vector<Tensor<S>>& bound, const Tensor<S>& image);

// Inference convenience: forward with the store's current values, no tape.
template <typename S>
Tensor<S> forward_model(const MaUnet<S>& model, const Tensor<S>& image);

struct ParamReport {
    std::size_t count = 0;
    double megabytes = 0.0;  // 4 bytes per value
    std::vector<std::pair<std::string, std::size_t>> by_block;
};

template <typename S>
ParamReport param_report(const MaUnet<S>& model);

#define MAUNET_EXTERN_MODEL(S)                                                               \
    extern template struct MaUnet<S>;                                                       \
    extern template MaUnet<S> build_model(const ModelConfig&, RngState);                     \
    extern template Tensor<S> multi_scale_fuse(GradTape<S>*, const std::vector<Tensor<S>>&, \
                                               const Tensor<S>&, const Tensor<S>&);         \
    extern template Tensor<S> forward_model(const MaUnet<S>&, GradTape<S>*,                 \
                                            const std::vector<Tensor<S>>&, const Tensor<S>&); \
    extern template Tensor<S> forward_model(const MaUnet<S>&, const Tensor<S>&);            \
    extern template ParamReport param_report(const MaUnet<S>&);

MAUNET_EXTERN_MODEL(float)
MAUNET_EXTERN_MODEL(double)
#undef MAUNET_EXTERN_MODEL

}  // namespace maunet
