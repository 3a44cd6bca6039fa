#include <doctest.h>

#include "maunet/checks.hpp"
#include "maunet/model.hpp"
#include "maunet/train.hpp"
#include "oracles.hpp"

using namespace maunet;

namespace {

ModelConfig desk_config() {
    ModelConfig c;
    c.in_channels = 1;
    c.base_width = 8;
    c.depth = 3;
    c.bottleneck_ratio = 4;
    return c;
}

std::size_t count_for(const ModelConfig& c) {
    return build_model<float>(c, RngState(1)).params.param_count();
}

}  // namespace

TEST_CASE("build: channel progression doubles per stage") {
    ModelConfig c = desk_config();
    c.depth = 2;
    MaUnet<float> model = build_model<float>(c, RngState(1));
    CHECK(model.params[model.params.find("enc0.conv1.w")].value.shape() == Shape{8, 1, 3, 3});
    CHECK(model.params[model.params.find("enc1.conv1.w")].value.shape() == Shape{16, 8, 3, 3});
    CHECK(model.params[model.params.find("bottleneck.conv1.w")].value.shape() ==
          Shape{32, 16, 3, 3});
    CHECK(model.params[model.params.find("dec1.up.w")].value.shape() == Shape{16, 32, 3, 3});
    CHECK(model.params[model.params.find("dec0.merge.w")].value.shape() == Shape{8, 16, 3, 3});

    // first conv of a 1->8 stage: 1*8*9 weights + 8 biases = 80 parameters
    const auto& w = model.params[model.params.find("enc0.conv1.w")].value;
    const auto& b = model.params[model.params.find("enc0.conv1.b")].value;
    CHECK(w.size() + b.size() == 80);
}

TEST_CASE("build: parameter count is strictly monotone in the toggles") {
    ModelConfig base = desk_config();
    base.enable_attention_gates = false;
    base.enable_dual_attention = false;
    base.enable_multiscale = false;
    const std::size_t plain = count_for(base);

    ModelConfig gates = base;
    gates.enable_attention_gates = true;
    ModelConfig fuse = base;
    fuse.enable_multiscale = true;
    ModelConfig dual = base;
    dual.enable_dual_attention = true;
    ModelConfig all = desk_config();

    CHECK(count_for(gates) > plain);
    CHECK(count_for(fuse) > plain);
    CHECK(count_for(dual) > plain);
    CHECK(count_for(all) > count_for(gates));
    CHECK(count_for(all) > count_for(fuse));
    CHECK(count_for(all) > count_for(dual));

    // every toggle combination builds and runs a forward pass
    for (int bits = 0; bits < 8; ++bits) {
        ModelConfig c = desk_config();
        c.depth = 2;
        c.base_width = 4;
        c.bottleneck_ratio = 2;
        c.enable_attention_gates = bits & 1;
        c.enable_dual_attention = bits & 2;
        c.enable_multiscale = bits & 4;
        MaUnet<float> m = build_model<float>(c, RngState(5));
        RngState rng(6);
        TensorF out = forward_model(m, random_uniform<float>({1, 1, 8, 8}, rng));
        CHECK(out.shape() == Shape{1, 1, 8, 8});
    }
}

TEST_CASE("build: invalid configs are rejected with the violated invariant") {
    ModelConfig c = desk_config();
    c.depth = 0;
    CHECK_THROWS_AS(build_model<float>(c, RngState(1)), ConfigError);
    c = desk_config();
    c.base_width = 0;
    CHECK_THROWS_AS(build_model<float>(c, RngState(1)), ConfigError);
    c = desk_config();
    c.bottleneck_ratio = 3;  // does not divide head width 8
    CHECK_THROWS_WITH_AS(build_model<float>(c, RngState(1)), doctest::Contains("bottleneck_ratio"),
                         ConfigError);
}

TEST_CASE("param_report: arithmetic and the overhead band vs the plain U-Net") {
    ModelConfig tiny;
    tiny.in_channels = 1;
    tiny.base_width = 8;
    tiny.depth = 1;
    tiny.bottleneck_ratio = 4;
    tiny.enable_attention_gates = false;
    tiny.enable_dual_attention = false;
    tiny.enable_multiscale = false;
    MaUnet<float> m = build_model<float>(tiny, RngState(1));
    const ParamReport r = param_report(m);
    CHECK(r.count == m.params.param_count());
    CHECK(r.megabytes == doctest::Approx(4.0 * static_cast<double>(r.count) / (1 << 20)));
    // a single 80-parameter conv is 320 bytes ~ 0.000305 MB
    CHECK(80 * 4.0 / (1 << 20) == doctest::Approx(0.000305).epsilon(2e-3));

    ModelConfig full = desk_config();
    ModelConfig plain = desk_config();
    plain.enable_attention_gates = false;
    plain.enable_dual_attention = false;
    plain.enable_multiscale = false;
    const double ratio =
        static_cast<double>(count_for(full)) / static_cast<double>(count_for(plain));
    CHECK(ratio > 1.00);
    CHECK(ratio <= 1.25);
}

TEST_CASE("param_report: doubling base_width roughly quadruples conv weights") {
    ModelConfig a = desk_config();
    ModelConfig b = desk_config();
    b.base_width = 16;
    auto weights_only = [](const ModelConfig& c) {
        MaUnet<float> m = build_model<float>(c, RngState(1));
        std::size_t n = 0;
        for (const auto& e : m.params.entries()) {
            if (e.name.ends_with(".w")) n += e.value.size();
        }
        return n;
    };
    const double ratio =
        static_cast<double>(weights_only(b)) / static_cast<double>(weights_only(a));
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.05);
}

TEST_CASE("forward: output shape equals input shape over random valid sizes") {
    ModelConfig c = desk_config();
    c.depth = 2;
    c.base_width = 4;
    c.bottleneck_ratio = 2;
    MaUnet<float> m = build_model<float>(c, RngState(2));
    RngState rng(7);
    for (int rep = 0; rep < 8; ++rep) {
        const int h = 4 * (1 + static_cast<int>(rng.next_below(5)));
        const int w = 4 * (1 + static_cast<int>(rng.next_below(5)));
        const int n = 1 + static_cast<int>(rng.next_below(2));
        TensorF out = forward_model(m, random_uniform<float>({n, 1, h, w}, rng));
        CHECK(out.shape() == Shape{n, 1, h, w});
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i] > 0.0f);
            CHECK(out[i] < 1.0f);
        }
    }
    // indivisible spatial size fails before any compute
    CHECK_THROWS_AS(forward_model(m, TensorF::zeros({1, 1, 6, 8})), ConfigError);
    CHECK_THROWS_AS(forward_model(m, TensorF::zeros({1, 2, 8, 8})), ShapeError);
}

TEST_CASE("forward with all toggles off equals a hand-assembled plain U-Net") {
    ModelConfig c;
    c.in_channels = 1;
    c.base_width = 4;
    c.depth = 2;
    c.enable_attention_gates = false;
    c.enable_dual_attention = false;
    c.enable_multiscale = false;
    MaUnet<float> m = build_model<float>(c, RngState(3));
    RngState rng(8);
    TensorF image = random_uniform<float>({1, 1, 8, 8}, rng);

    const TensorF got = forward_model(m, image);

    // the same computation, composed by hand from the primitive kernels
    auto p = [&](const char* name) { return m.params[m.params.find(name)].value; };
    auto cr = [&](const TensorF& x, const char* stem) {
        return relu<float>(nullptr,
                           conv2d<float>(nullptr, x,
                                         p((std::string(stem) + ".w").c_str()),
                                         p((std::string(stem) + ".b").c_str()), 1, 1));
    };
    TensorF e0 = cr(cr(image, "enc0.conv1"), "enc0.conv2");
    TensorF x = max_pool2d<float>(nullptr, e0, 2, 2);
    TensorF e1 = cr(cr(x, "enc1.conv1"), "enc1.conv2");
    x = max_pool2d<float>(nullptr, e1, 2, 2);
    x = cr(cr(x, "bottleneck.conv1"), "bottleneck.conv2");
    x = cr(bilinear_upsample<float>(nullptr, x, 4, 4), "dec1.up");
    x = cr(concat<float>(nullptr, {x, e1}, 1), "dec1.merge");
    x = cr(bilinear_upsample<float>(nullptr, x, 8, 8), "dec0.up");
    x = cr(concat<float>(nullptr, {x, e0}, 1), "dec0.merge");
    TensorF want = sigmoid<float>(
        nullptr, conv2d<float>(nullptr, x, p("head.conv.w"), p("head.conv.b"), 1, 0));

    CHECK(got.values() == want.values());
}

TEST_CASE("multi_scale_fuse composes upsample, concat and conv bit-identically") {
    RngState rng(9);
    TensorF coarse = random_normal<float>({1, 4, 4, 4}, rng);
    TensorF fine = random_normal<float>({1, 2, 8, 8}, rng);
    TensorF w = random_normal<float>({3, 6, 3, 3}, rng);
    TensorF b = random_normal<float>({3}, rng);

    TensorF got = multi_scale_fuse<float>(nullptr, {coarse, fine}, w, b);
    CHECK(got.shape() == Shape{1, 3, 8, 8});

    TensorF lifted = bilinear_upsample<float>(nullptr, coarse, 8, 8);
    TensorF stacked = concat<float>(nullptr, {lifted, fine}, 1);
    CHECK(stacked.shape() == Shape{1, 6, 8, 8});  // 4 + 2 channels at the finest scale
    TensorF want = relu<float>(nullptr, conv2d<float>(nullptr, stacked, w, b, 1, 1));
    CHECK(got.values() == want.values());

    CHECK_THROWS_AS(multi_scale_fuse<float>(nullptr, {}, w, b), UsageError);
}

TEST_CASE("multi_scale_fuse on constant scales keeps the constant away from borders") {
    const float value = 0.6f;
    TensorD coarse = TensorD::full({1, 2, 4, 4}, value);
    TensorD fine = TensorD::full({1, 2, 8, 8}, value);

    // averaging kernel: interior outputs see 4 channels x 9 taps of `value`
    TensorD w_avg = TensorD::full({1, 4, 3, 3}, 1.0 / 36.0);
    TensorD fused = multi_scale_fuse<double>(nullptr, {coarse, fine}, w_avg, TensorD::zeros({1}));
    for (int y = 1; y < 7; ++y)
        for (int x = 1; x < 7; ++x) {
            CHECK(fused.at({0, 0, y, x}) == doctest::Approx(value).epsilon(1e-12));
        }

    // delta kernel avoids the zero padding entirely: constant everywhere
    std::vector<double> delta(4 * 9, 0.0);
    delta[4] = 1.0;  // center tap of channel 0
    TensorD w_delta({1, 4, 3, 3}, std::move(delta));
    TensorD picked = multi_scale_fuse<double>(nullptr, {coarse, fine}, w_delta, TensorD::zeros({1}));
    for (std::size_t i = 0; i < picked.size(); ++i) CHECK(picked[i] == doctest::Approx(value).epsilon(1e-15));
}

TEST_CASE("census completeness: every parameter receives gradient on a random batch") {
    ModelConfig c = desk_config();
    c.depth = 2;
    c.base_width = 8;
    c.bottleneck_ratio = 4;
    MaUnet<float> m = build_model<float>(c, RngState(4));
    RngState rng(10);
    TensorF image = random_uniform<float>({2, 1, 16, 16}, rng);
    TensorF target = binarize(random_uniform<float>({2, 1, 16, 16}, rng), 0.5f);

    GradTapeF tape;
    const auto bound = m.params.bind(&tape);
    TensorF pred = forward_model(m, &tape, bound, image);
    TensorF loss = bce_loss(&tape, pred, target, TrainConfig::Reduction::Mean);
    const auto grads = tape.backward(tape.node_of(loss));

    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const TensorF g = grads.get_or_zero(bound[i].node(), bound[i].shape());
        double max_abs = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            max_abs = std::max(max_abs, std::fabs(static_cast<double>(g[j])));
        }
        INFO("parameter ", m.params.entries()[i].name);
        CHECK(max_abs > 0.0);
    }
}

TEST_CASE("build + forward are bit-identical for a fixed seed") {
    auto run = [] {
        ModelConfig c = desk_config();
        c.depth = 2;
        c.base_width = 4;
        c.bottleneck_ratio = 2;
        MaUnet<float> m = build_model<float>(c, RngState(77));
        RngState rng(78);
        return forward_model(m, random_uniform<float>({1, 1, 8, 8}, rng)).values();
    };
    CHECK(run() == run());
}

TEST_CASE("full model passes gradcheck at depth 1") {
    const BlockCheck check = run_gradcheck("model", 7);
    INFO(check.report.summary());
    CHECK(check.report.pass(1e-3));
}
