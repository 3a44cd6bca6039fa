#include "maunet/checks.hpp"

#include "maunet/attention.hpp"
#include "maunet/model.hpp"
#include "maunet/train.hpp"

namespace maunet {

namespace {

using Prog = TensorProgram;

// Scalar readout sum(out * R) with a fixed random probe so every output
// element influences the loss.
TensorD probe_like(const Shape& shape, RngState& rng) {
    return random_uniform<double>(shape, rng, 0.25, 1.0);
}

TensorD readout(GradTape<double>& tape, const TensorD& out, const TensorD& probe) {
    return reduce_sum(&tape, mul(&tape, out, probe));
}

struct CheckDef {
    std::vector<TensorD> inputs;
    std::vector<std::string> names;
    Prog program;
    double tol = 1e-4;
    int max_coords = 48;
};

CheckDef make_conv_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(1);
    def.inputs = {random_normal<double>({2, 3, 6, 6}, data),
                  random_normal<double>({4, 3, 3, 3}, data, 0.0, 0.3),
                  random_normal<double>({4}, data, 0.0, 0.3)};
    def.names = {"input", "weight", "bias"};
    TensorD probe = probe_like({2, 4, 6, 6}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, conv2d(&tape, in[0], in[1], in[2], 1, 1), probe);
    };
    return def;
}

CheckDef make_pool_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(2);
    def.inputs = {random_uniform<double>({1, 2, 6, 6}, data, -1.0, 1.0)};
    def.names = {"input"};
    TensorD probe = probe_like({1, 2, 3, 3}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, max_pool2d(&tape, in[0], 2, 2), probe);
    };
    return def;
}

CheckDef make_upsample_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(3);
    def.inputs = {random_normal<double>({1, 2, 3, 4}, data)};
    def.names = {"input"};
    TensorD probe = probe_like({1, 2, 7, 9}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, bilinear_upsample(&tape, in[0], 7, 9), probe);
    };
    return def;
}

CheckDef make_softmax_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(4);
    def.inputs = {random_normal<double>({2, 5, 3}, data)};
    def.names = {"input"};
    TensorD probe = probe_like({2, 5, 3}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, softmax(&tape, in[0], 1), probe);
    };
    return def;
}

CheckDef make_layernorm_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(5);
    def.inputs = {random_normal<double>({2, 4, 2, 2}, data),
                  random_uniform<double>({4, 2, 2}, data, 0.5, 1.5),
                  random_normal<double>({4, 2, 2}, data, 0.0, 0.2)};
    def.names = {"input", "gain", "offset"};
    TensorD probe = probe_like({2, 4, 2, 2}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, layer_norm(&tape, in[0], {1, 2, 3}, in[1], in[2]), probe);
    };
    return def;
}

CheckDef make_matmul_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(6);
    def.inputs = {random_normal<double>({2, 3, 4}, data), random_normal<double>({2, 4, 5}, data)};
    def.names = {"a", "b"};
    TensorD probe = probe_like({2, 3, 5}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, matmul(&tape, in[0], in[1]), probe);
    };
    return def;
}

CheckDef make_pointwise_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(7);
    def.inputs = {random_normal<double>({2, 3, 4, 4}, data),
                  random_normal<double>({2, 3, 4, 4}, data),
                  random_normal<double>({1}, data)};
    def.names = {"a", "b", "scalar"};
    TensorD probe = probe_like({2, 6, 4, 4}, data);
    // relu(a)+sigmoid(b), scalar-scaled, concatenated with a*b
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        TensorD left = add(&tape, relu(&tape, in[0]), sigmoid(&tape, in[1]));
        TensorD right = mul(&tape, in[0], in[1]);
        TensorD both = concat(&tape, {mul(&tape, left, in[2]), right}, 1);
        return readout(tape, both, probe);
    };
    return def;
}

CheckDef make_bce_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(8);
    def.inputs = {random_uniform<double>({2, 1, 4, 4}, data, 0.05, 0.95)};
    def.names = {"pre"};
    std::vector<double> gt_values(2 * 4 * 4);
    for (auto& v : gt_values) v = data.next_below(2) ? 1.0 : 0.0;
    TensorD gt({2, 1, 4, 4}, std::move(gt_values));
    def.program = [gt](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return bce_loss(&tape, in[0], gt, TrainConfig::Reduction::Mean);
    };
    def.tol = 1e-5;
    return def;
}

CheckDef make_channel_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(9);
    def.inputs = {random_normal<double>({1, 4, 3, 3}, data), TensorD({1}, {0.7})};
    def.names = {"a", "beta"};
    TensorD probe = probe_like({1, 4, 3, 3}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        ChannelAttentionParams<double> params{in[1]};
        return readout(tape, channel_attention(&tape, in[0], params), probe);
    };
    return def;
}

std::vector<TensorD> context_param_tensors(int channels, int ratio, RngState& data) {
    const int cr = channels / ratio;
    return {random_normal<double>({1, channels, 1, 1}, data, 0.0, 0.5),
            random_normal<double>({1}, data, 0.0, 0.2),
            random_normal<double>({cr, channels, 1, 1}, data, 0.0, 0.5),
            random_normal<double>({cr}, data, 0.0, 0.2),
            random_uniform<double>({cr, 1, 1}, data, 0.5, 1.5),
            random_normal<double>({cr, 1, 1}, data, 0.0, 0.2),
            random_normal<double>({channels, cr, 1, 1}, data, 0.0, 0.5),
            random_normal<double>({channels}, data, 0.0, 0.2)};
}

GlobalContextParams<double> context_params_from(const std::vector<TensorD>& in, std::size_t base,
                                                int ratio) {
    GlobalContextParams<double> p;
    p.ratio = ratio;
    p.wk_w = in[base];
    p.wk_b = in[base + 1];
    p.wv1_w = in[base + 2];
    p.wv1_b = in[base + 3];
    p.ln_gain = in[base + 4];
    p.ln_offset = in[base + 5];
    p.wv2_w = in[base + 6];
    p.wv2_b = in[base + 7];
    return p;
}

const std::vector<std::string> kContextParamNames = {"wk.w",  "wk.b",  "wv1.w",    "wv1.b",
                                                     "ln.gain", "ln.offset", "wv2.w", "wv2.b"};

CheckDef make_context_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(10);
    def.inputs = {random_normal<double>({1, 4, 4, 4}, data)};
    def.names = {"a"};
    const auto params = context_param_tensors(4, 2, data);
    def.inputs.insert(def.inputs.end(), params.begin(), params.end());
    def.names.insert(def.names.end(), kContextParamNames.begin(), kContextParamNames.end());
    TensorD probe = probe_like({1, 4, 4, 4}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return readout(tape, global_context_attention(&tape, in[0], context_params_from(in, 1, 2)),
                       probe);
    };
    return def;
}

CheckDef make_gate_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(11);
    def.inputs = {random_normal<double>({1, 4, 8, 8}, data),
                  random_normal<double>({1, 8, 4, 4}, data),
                  random_normal<double>({2, 4, 1, 1}, data, 0.0, 0.5),
                  random_normal<double>({2, 8, 1, 1}, data, 0.0, 0.5),
                  random_normal<double>({1, 2, 1, 1}, data, 0.0, 0.5),
                  random_normal<double>({1}, data, 0.0, 0.2)};
    def.names = {"skip", "gate", "wx.w", "wg.w", "psi.w", "psi.b"};
    TensorD probe = probe_like({1, 4, 8, 8}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        AttentionGateParams<double> p;
        p.wx_w = in[2];
        p.wg_w = in[3];
        p.psi_w = in[4];
        p.psi_b = in[5];
        return readout(tape, attention_gate(&tape, in[0], in[1], p), probe);
    };
    return def;
}

CheckDef make_dual_check(RngState rng) {
    CheckDef def;
    RngState data = rng.split(12);
    def.inputs = {random_normal<double>({1, 4, 4, 4}, data), TensorD({1}, {0.4})};
    def.names = {"a", "beta"};
    const auto params = context_param_tensors(4, 2, data);
    def.inputs.insert(def.inputs.end(), params.begin(), params.end());
    def.names.insert(def.names.end(), kContextParamNames.begin(), kContextParamNames.end());
    TensorD probe = probe_like({1, 4, 4, 4}, data);
    def.program = [probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        ChannelAttentionParams<double> ca{in[1]};
        return readout(tape, dual_attention(&tape, in[0], ca, context_params_from(in, 2, 2)),
                       probe);
    };
    return def;
}

CheckDef make_model_check(RngState rng) {
    CheckDef def;
    def.tol = 1e-3;
    def.max_coords = 6;

    ModelConfig config;
    config.in_channels = 1;
    config.base_width = 2;
    config.depth = 1;
    config.bottleneck_ratio = 2;
    auto model = std::make_shared<MaUnet<double>>(build_model<double>(config, rng.split(13)));

    RngState data = rng.split(14);
    def.inputs.push_back(random_uniform<double>({1, 1, 8, 8}, data, 0.0, 1.0));
    def.names.push_back("image");
    for (const auto& entry : model->params.entries()) {
        // inactive at init would hide bugs: perturb every parameter away from 0
        std::vector<double> v(entry.value.values());
        for (auto& x : v) x += 0.15 * data.next_normal();
        def.inputs.emplace_back(entry.value.shape(), std::move(v));
        def.names.push_back(entry.name);
    }
    TensorD probe = probe_like({1, 1, 8, 8}, data);
    def.program = [model, probe](GradTape<double>& tape, const std::vector<TensorD>& in) {
        const std::vector<TensorD> bound(in.begin() + 1, in.end());
        return readout(tape, forward_model(*model, &tape, bound, in[0]), probe);
    };
    return def;
}

CheckDef make_check(const std::string& name, std::uint64_t seed) {
    RngState rng = RngState(seed).split(RngState::kInit);
    if (name == "conv") return make_conv_check(rng);
    if (name == "pool") return make_pool_check(rng);
    if (name == "upsample") return make_upsample_check(rng);
    if (name == "softmax") return make_softmax_check(rng);
    if (name == "layernorm") return make_layernorm_check(rng);
    if (name == "matmul") return make_matmul_check(rng);
    if (name == "pointwise") return make_pointwise_check(rng);
    if (name == "bce") return make_bce_check(rng);
    if (name == "channel") return make_channel_check(rng);
    if (name == "context") return make_context_check(rng);
    if (name == "gate") return make_gate_check(rng);
    if (name == "dual") return make_dual_check(rng);
    if (name == "model") return make_model_check(rng);
    throw UsageError("gradcheck: unknown block '" + name + "'");
}

}  // namespace

std::vector<std::string> gradcheck_names() {
    return {"conv",      "pool", "upsample", "softmax", "layernorm", "matmul", "pointwise",
            "bce",       "channel", "context", "gate",  "dual",      "model"};
}

BlockCheck run_gradcheck(const std::string& name, std::uint64_t seed) {
    CheckDef def = make_check(name, seed);
    BlockCheck result;
    result.name = name;
    result.tol = def.tol;
    result.report = gradcheck(def.program, def.inputs, def.names,
                              RngState(seed).split(RngState::kData), 1e-4, def.max_coords);
    return result;
}

std::vector<BlockCheck> run_all_gradchecks(std::uint64_t seed) {
    std::vector<BlockCheck> out;
    for (const auto& name : gradcheck_names()) out.push_back(run_gradcheck(name, seed));
    return out;
}

}  // namespace maunet
