#include "maunet/model.hpp"

#include <algorithm>
#include <map>

namespace maunet {

namespace {

template <typename S>
ConvRef add_conv(ParamStore<S>& store, const std::string& name, int c_out, int c_in, int k,
                 RngState& rng) {
    ConvRef ref;
    ref.w = store.add(name + ".w", kaiming_conv_init<S>(c_out, c_in, k, k, rng));
    ref.b = store.add(name + ".b", Tensor<S>::zeros({c_out}));
    return ref;
}

template <typename S>
Tensor<S> conv_relu(GradTape<S>* tape, const Tensor<S>& x, const std::vector<Tensor<S>>& p,
                    const ConvRef& ref, int padding) {
    return relu(tape, conv2d(tape, x, p[static_cast<std::size_t>(ref.w)],
                             p[static_cast<std::size_t>(ref.b)], 1, padding));
}

template <typename S>
AttentionGateParams<S> gate_params(const std::vector<Tensor<S>>& p, const GateRef& ref) {
    AttentionGateParams<S> g;
    g.wx_w = p[static_cast<std::size_t>(ref.wx_w)];
    g.wg_w = p[static_cast<std::size_t>(ref.wg_w)];
    g.psi_w = p[static_cast<std::size_t>(ref.psi_w)];
    g.psi_b = p[static_cast<std::size_t>(ref.psi_b)];
    return g;
}

}  // namespace

template <typename S>
MaUnet<S> build_model(const ModelConfig& config, RngState rng) {
    config.validate();
    RngState init_rng = rng.split(RngState::kInit);

    MaUnet<S> model;
    model.config = config;
    auto& store = model.params;

    int ch = config.in_channels;
    int width = config.base_width;
    for (int s = 0; s < config.depth; ++s) {
        const std::string prefix = "enc" + std::to_string(s);
        typename MaUnet<S>::Stage stage;
        stage.conv1 = add_conv(store, prefix + ".conv1", width, ch, 3, init_rng);
        stage.conv2 = add_conv(store, prefix + ".conv2", width, width, 3, init_rng);
        model.encoder.push_back(stage);
        ch = width;
        width *= 2;
    }
    // width is now base_width * 2^depth
    model.bottleneck.conv1 = add_conv(store, "bottleneck.conv1", width, ch, 3, init_rng);
    model.bottleneck.conv2 = add_conv(store, "bottleneck.conv2", width, width, 3, init_rng);

    model.decoder.resize(static_cast<std::size_t>(config.depth));
    for (int s = config.depth - 1; s >= 0; --s) {
        const std::string prefix = "dec" + std::to_string(s);
        const int c_out = config.base_width << s;  // stage output channels
        const int c_in = c_out * 2;                // channels arriving from below
        typename MaUnet<S>::DecoderStage stage;
        stage.up = add_conv(store, prefix + ".up", c_out, c_in, 3, init_rng);
        if (config.enable_attention_gates) {
            const int f_int = std::max(c_out / 2, 1);
            stage.gate.wx_w =
                store.add(prefix + ".gate.wx.w", kaiming_conv_init<S>(f_int, c_out, 1, 1, init_rng));
            stage.gate.wg_w =
                store.add(prefix + ".gate.wg.w", kaiming_conv_init<S>(f_int, c_in, 1, 1, init_rng));
            stage.gate.psi_w =
                store.add(prefix + ".gate.psi.w", kaiming_conv_init<S>(1, f_int, 1, 1, init_rng));
            stage.gate.psi_b = store.add(prefix + ".gate.psi.b", Tensor<S>::zeros({1}));
        }
        stage.merge = add_conv(store, prefix + ".merge", c_out, c_in, 3, init_rng);
        model.decoder[static_cast<std::size_t>(s)] = stage;
    }

    if (config.enable_multiscale) {
        int concat_ch = 0;
        for (int s = 0; s < config.depth; ++s) concat_ch += config.base_width << s;
        model.fuse = add_conv(store, "fuse.conv", config.resolved_fused_channels(), concat_ch, 3,
                              init_rng);
    }

    if (config.enable_dual_attention) {
        const int c = config.head_width();
        const int cr = c / config.bottleneck_ratio;
        model.ca_beta = store.add("att.channel.beta", Tensor<S>::zeros({1}));
        model.gc.wk_w = store.add("att.global.wk.w", kaiming_conv_init<S>(1, c, 1, 1, init_rng));
        model.gc.wk_b = store.add("att.global.wk.b", Tensor<S>::zeros({1}));
        model.gc.wv1_w = store.add("att.global.wv1.w", kaiming_conv_init<S>(cr, c, 1, 1, init_rng));
        model.gc.wv1_b = store.add("att.global.wv1.b", Tensor<S>::zeros({cr}));
        model.gc.ln_gain = store.add("att.global.ln.gain", Tensor<S>::full({cr, 1, 1}, S(1)));
        model.gc.ln_offset = store.add("att.global.ln.offset", Tensor<S>::zeros({cr, 1, 1}));
        model.gc.wv2_w = store.add("att.global.wv2.w", kaiming_conv_init<S>(c, cr, 1, 1, init_rng));
        model.gc.wv2_b = store.add("att.global.wv2.b", Tensor<S>::zeros({c}));
    }

    model.head = add_conv(store, "head.conv", 1, config.head_width(), 1, init_rng);
    return model;
}

template <typename S>
Tensor<S> multi_scale_fuse(GradTape<S>* tape, const std::vector<Tensor<S>>& scales,
                           const Tensor<S>& fuse_w, const Tensor<S>& fuse_b) {
    if (scales.empty()) throw UsageError("multi_scale_fuse: empty scale list");
    const Tensor<S>& finest = scales.back();
    const int h = finest.dim(2), w = finest.dim(3);
    std::vector<Tensor<S>> lifted;
    lifted.reserve(scales.size());
    for (const auto& f : scales) {
        lifted.push_back(f.dim(2) == h && f.dim(3) == w ? f : bilinear_upsample(tape, f, h, w));
    }
    Tensor<S> stacked = scales.size() == 1 ? lifted.front() : concat(tape, lifted, 1);
    return relu(tape, conv2d(tape, stacked, fuse_w, fuse_b, 1, 1));
}

template <typename S>
Tensor<S> forward_model(const MaUnet<S>& model, GradTape<S>* tape,
                        const std::vector<Tensor<S>>& bound, const Tensor<S>& image) {
    const ModelConfig& cfg = model.config;
    if (image.ndim() != 4 || image.dim(1) != cfg.in_channels) {
        throw ShapeError("forward: expected N x " + std::to_string(cfg.in_channels) +
                         " x H x W input, got " + shape_str(image.shape()));
    }
    if (bound.size() != model.params.size()) {
        throw UsageError("forward: bound parameter list does not match the param store");
    }
    const int h = image.dim(2), w = image.dim(3);
    const int factor = 1 << cfg.depth;
    if (h % factor != 0 || w % factor != 0 || h < factor || w < factor) {
        throw ConfigError("forward: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by 2^depth = " + std::to_string(factor));
    }

    // encoder
    std::vector<Tensor<S>> skips;
    skips.reserve(static_cast<std::size_t>(cfg.depth));
    Tensor<S> x = image;
    for (int s = 0; s < cfg.depth; ++s) {
        const auto& stage = model.encoder[static_cast<std::size_t>(s)];
        Tensor<S> t = conv_relu(tape, x, bound, stage.conv1, 1);
        t = conv_relu(tape, t, bound, stage.conv2, 1);
        skips.push_back(t);
        x = max_pool2d(tape, t, 2, 2);
    }
    x = conv_relu(tape, x, bound, model.bottleneck.conv1, 1);
    x = conv_relu(tape, x, bound, model.bottleneck.conv2, 1);

    // decoder, deepest stage first; stage s emits features at resolution /2^s
    std::vector<Tensor<S>> scales;  // coarse to fine
    scales.reserve(static_cast<std::size_t>(cfg.depth));
    for (int s = cfg.depth - 1; s >= 0; --s) {
        const auto& stage = model.decoder[static_cast<std::size_t>(s)];
        const Tensor<S>& skip = skips[static_cast<std::size_t>(s)];
        Tensor<S> gating = x;  // pre-upsample feature: half the skip's resolution
        Tensor<S> up = bilinear_upsample(tape, x, skip.dim(2), skip.dim(3));
        up = conv_relu(tape, up, bound, stage.up, 1);
        Tensor<S> lateral =
            cfg.enable_attention_gates
                ? attention_gate(tape, skip, gating, gate_params(bound, stage.gate))
                : skip;
        x = conv_relu(tape, concat(tape, {up, lateral}, 1), bound, stage.merge, 1);
        scales.push_back(x);
    }

    Tensor<S> feature = cfg.enable_multiscale
                            ? multi_scale_fuse(tape, scales,
                                               bound[static_cast<std::size_t>(model.fuse.w)],
                                               bound[static_cast<std::size_t>(model.fuse.b)])
                            : x;

    if (cfg.enable_dual_attention) {
        ChannelAttentionParams<S> ca{bound[static_cast<std::size_t>(model.ca_beta)]};
        GlobalContextParams<S> gc;
        gc.ratio = cfg.bottleneck_ratio;
        gc.wk_w = bound[static_cast<std::size_t>(model.gc.wk_w)];
        gc.wk_b = bound[static_cast<std::size_t>(model.gc.wk_b)];
        gc.wv1_w = bound[static_cast<std::size_t>(model.gc.wv1_w)];
        gc.wv1_b = bound[static_cast<std::size_t>(model.gc.wv1_b)];
        gc.ln_gain = bound[static_cast<std::size_t>(model.gc.ln_gain)];
        gc.ln_offset = bound[static_cast<std::size_t>(model.gc.ln_offset)];
        gc.wv2_w = bound[static_cast<std::size_t>(model.gc.wv2_w)];
        gc.wv2_b = bound[static_cast<std::size_t>(model.gc.wv2_b)];
        feature = dual_attention(tape, feature, ca, gc);
    }

    Tensor<S> logits = conv2d(tape, feature, bound[static_cast<std::size_t>(model.head.w)],
                              bound[static_cast<std::size_t>(model.head.b)], 1, 0);
    return sigmoid(tape, logits);
}

template <typename S>
Tensor<S> forward_model(const MaUnet<S>& model, const Tensor<S>& image) {
    return forward_model(model, static_cast<GradTape<S>*>(nullptr), model.params.bind(nullptr),
                         image);
}

template <typename S>
ParamReport param_report(const MaUnet<S>& model) {
    ParamReport report;
    std::map<std::string, std::size_t> blocks;
    for (const auto& e : model.params.entries()) {
        report.count += e.value.size();
        const std::string block = e.name.substr(0, e.name.find('.'));
        blocks[block] += e.value.size();
    }
    report.megabytes = 4.0 * static_cast<double>(report.count) / (1024.0 * 1024.0);
    // itemize in store order, not map order
    std::vector<std::string> seen;
    for (const auto& e : model.params.entries()) {
        const std::string block = e.name.substr(0, e.name.find('.'));
        if (std::find(seen.begin(), seen.end(), block) == seen.end()) {
            seen.push_back(block);
            report.by_block.emplace_back(block, blocks[block]);
        }
    }
    return report;
}

#define MAUNET_INSTANTIATE_MODEL(S)                                                          \
    template struct MaUnet<S>;                                                               \
    template MaUnet<S> build_model(const ModelConfig&, RngState);                            \
    template Tensor<S> multi_scale_fuse(GradTape<S>*, const std::vector<Tensor<S>>&,         \
                                        const Tensor<S>&, const Tensor<S>&);                 \
    template Tensor<S> forward_model(const MaUnet<S>&, GradTape<S>*,                         \
                                     const std::vector<Tensor<S>>&, const Tensor<S>&);       \
    template Tensor<S> forward_model(const MaUnet<S>&, const Tensor<S>&);                    \
    template ParamReport param_report(const MaUnet<S>&);

MAUNET_INSTANTIATE_MODEL(float)
MAUNET_INSTANTIATE_MODEL(double)
#undef MAUNET_INSTANTIATE_MODEL

}  // namespace maunet
