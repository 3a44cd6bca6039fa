#include <doctest.h>

#include "maunet/attention.hpp"
#include "maunet/gradcheck.hpp"
#include "oracles.hpp"

using namespace maunet;

namespace {

oracle::ContextParams to_oracle(const GlobalContextParams<double>& p, int channels) {
    oracle::ContextParams o;
    const int cr = p.wv1_w.dim(0);
    for (int c = 0; c < channels; ++c) o.wk_w.push_back(p.wk_w.at({0, c, 0, 0}));
    o.wk_b = p.wk_b[0];
    o.wv1_w.resize(static_cast<std::size_t>(cr));
    for (int q = 0; q < cr; ++q) {
        for (int c = 0; c < channels; ++c) o.wv1_w[static_cast<std::size_t>(q)].push_back(p.wv1_w.at({q, c, 0, 0}));
        o.wv1_b.push_back(p.wv1_b[static_cast<std::size_t>(q)]);
        o.ln_gain.push_back(p.ln_gain[static_cast<std::size_t>(q)]);
        o.ln_offset.push_back(p.ln_offset[static_cast<std::size_t>(q)]);
    }
    o.wv2_w.resize(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        for (int q = 0; q < cr; ++q) o.wv2_w[static_cast<std::size_t>(c)].push_back(p.wv2_w.at({c, q, 0, 0}));
        o.wv2_b.push_back(p.wv2_b[static_cast<std::size_t>(c)]);
    }
    return o;
}

GlobalContextParams<double> random_context_params(int channels, int ratio, RngState& rng) {
    GlobalContextParams<double> p = GlobalContextParams<double>::init(channels, ratio, rng);
    // init leaves biases/offsets at zero; randomize everything for oracle runs
    const int cr = channels / ratio;
    p.wk_b = random_normal<double>({1}, rng, 0.0, 0.3);
    p.wv1_b = random_normal<double>({cr}, rng, 0.0, 0.3);
    p.ln_gain = random_uniform<double>({cr, 1, 1}, rng, 0.5, 1.5);
    p.ln_offset = random_normal<double>({cr, 1, 1}, rng, 0.0, 0.3);
    p.wv2_b = random_normal<double>({channels}, rng, 0.0, 0.3);
    return p;
}

}  // namespace

TEST_CASE("channel attention with beta = 0 is exactly the identity") {
    RngState rng(21);
    TensorD a = random_normal<double>({2, 5, 3, 4}, rng);
    ChannelAttentionParams<double> p = ChannelAttentionParams<double>::init();
    TensorD out = channel_attention<double>(nullptr, a, p);
    CHECK(oracle::max_abs_diff(out, a) == 0.0);
}

TEST_CASE("channel attention with C = 1 is (1 + beta) * input") {
    RngState rng(22);
    TensorD a = random_normal<double>({1, 1, 4, 4}, rng);
    ChannelAttentionParams<double> p{TensorD({1}, {0.3})};
    TensorD out = channel_attention<double>(nullptr, a, p);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(out[i] == doctest::Approx(1.3 * a[i]).epsilon(1e-12));
    }
}

TEST_CASE("channel attention matches the explicit exp/normalize-table oracle") {
    RngState rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD a = random_normal<double>({1, 4, 3, 3}, rng);
        ChannelAttentionParams<double> p{TensorD({1}, {0.7})};
        TensorD got = channel_attention<double>(nullptr, a, p);
        TensorD want = oracle::channel_attention(a, 0.7);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
    // f32 path against the same oracle
    for (int rep = 0; rep < 20; ++rep) {
        TensorF a = random_normal<float>({2, 3, 4, 4}, rng);
        ChannelAttentionParams<float> p{TensorF({1}, {0.7f})};
        TensorF got = channel_attention<float>(nullptr, a, p);
        TensorF want = oracle::channel_attention(a, 0.7);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("channel attention map rows sum to 1 with entries in (0,1)") {
    RngState rng(24);
    for (int rep = 0; rep < 100; ++rep) {
        const int c = 2 + static_cast<int>(rng.next_below(5));
        TensorD a = random_normal<double>({1, c, 3, 3}, rng);
        TensorD map = channel_attention_map<double>(nullptr, a);
        for (int j = 0; j < c; ++j) {
            double sum = 0.0;
            for (int i = 0; i < c; ++i) {
                const double v = map.at({0, j, i});
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                sum += v;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("channel attention commutes with channel permutations") {
    RngState rng(25);
    for (int rep = 0; rep < 10; ++rep) {
        const int c = 5;
        TensorD a = random_normal<double>({1, c, 3, 3}, rng);
        ChannelAttentionParams<double> p{TensorD({1}, {0.9})};

        // random permutation of the channels
        std::vector<int> perm(c);
        for (int i = 0; i < c; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = c; i > 1; --i) {
            std::swap(perm[static_cast<std::size_t>(i - 1)],
                      perm[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i)))]);
        }
        auto permute_channels = [&](const TensorD& t) {
            std::vector<double> out(t.size());
            const std::size_t hw = 9;
            for (int ch = 0; ch < c; ++ch) {
                const double* src = t.data() + static_cast<std::size_t>(perm[static_cast<std::size_t>(ch)]) * hw;
                std::copy(src, src + hw, out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ch) * hw));
            }
            return TensorD(t.shape(), std::move(out));
        };

        const TensorD block_then_permute = permute_channels(channel_attention<double>(nullptr, a, p));
        const TensorD permute_then_block = channel_attention<double>(nullptr, permute_channels(a), p);
        CHECK(oracle::max_abs_diff(block_then_permute, permute_then_block) <= 1e-12);
    }
}

TEST_CASE("global context with zeroed wv2 is exactly the identity") {
    RngState rng(26);
    TensorD a = random_normal<double>({2, 4, 5, 3}, rng);
    GlobalContextParams<double> p = random_context_params(4, 2, rng);
    p.wv2_w = TensorD::zeros({4, 2, 1, 1});
    p.wv2_b = TensorD::zeros({4});
    TensorD out = global_context_attention<double>(nullptr, a, p);
    CHECK(oracle::max_abs_diff(out, a) == 0.0);
}

TEST_CASE("global context with zeroed wk gives uniform weights, i.e. the spatial mean") {
    RngState rng(27);
    TensorD a = random_normal<double>({1, 4, 3, 3}, rng);
    GlobalContextParams<double> p = random_context_params(4, 2, rng);
    p.wk_w = TensorD::zeros({1, 4, 1, 1});
    p.wk_b = TensorD::zeros({1});

    TensorD weights = global_context_weights<double>(nullptr, a, p);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        CHECK(weights[i] == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
    }
}

TEST_CASE("global context matches the position-loop oracle") {
    RngState rng(28);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD a = random_normal<double>({1, 4, 4, 4}, rng);
        GlobalContextParams<double> p = random_context_params(4, 2, rng);
        TensorD got = global_context_attention<double>(nullptr, a, p);
        TensorD want = oracle::global_context(a, to_oracle(p, 4));
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("global context spatial weights sum to 1") {
    RngState rng(29);
    for (int rep = 0; rep < 100; ++rep) {
        TensorD a = random_normal<double>({1, 4, 4, 4}, rng);
        GlobalContextParams<double> p = random_context_params(4, 4, rng);
        TensorD w = global_context_weights<double>(nullptr, a, p);
        double sum = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) sum += w[i];
        CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("the added context is identical at every position") {
    RngState rng(30);

    // constant input: every position computes the same bits, so positional
    // invariance is observable on the raw output with zero pairwise diff
    TensorD flat = TensorD::full({1, 4, 4, 4}, 0.75);
    GlobalContextParams<double> p = random_context_params(4, 2, rng);
    TensorD out_flat = global_context_attention<double>(nullptr, flat, p);
    for (int c = 0; c < 4; ++c) {
        const double first = out_flat.at({0, c, 0, 0});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) CHECK(out_flat.at({0, c, y, x}) == first);
    }

    // random input: recovering the addend via out - a rounds once per
    // position, so the recovered values agree to within an ulp of the sum
    TensorD a = random_normal<double>({1, 4, 4, 4}, rng);
    TensorD out = global_context_attention<double>(nullptr, a, p);
    for (int c = 0; c < 4; ++c) {
        const double first = out.at({0, c, 0, 0}) - a.at({0, c, 0, 0});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const double d = out.at({0, c, y, x}) - a.at({0, c, y, x});
                CHECK(std::fabs(d - first) <= 1e-14);
            }
    }
}

TEST_CASE("global context rejects a ratio that does not divide C") {
    RngState rng(31);
    CHECK_THROWS_AS(GlobalContextParams<double>::init(6, 4, rng), ConfigError);
    TensorD a = random_normal<double>({1, 4, 2, 2}, rng);
    GlobalContextParams<double> p = random_context_params(4, 2, rng);
    p.ratio = 3;
    CHECK_THROWS_AS(global_context_attention<double>(nullptr, a, p), ConfigError);
}

TEST_CASE("dual attention adds the two block outputs") {
    RngState rng(32);
    TensorD a = random_normal<double>({1, 4, 3, 3}, rng);

    // identity settings on both blocks -> exactly 2a
    ChannelAttentionParams<double> ca0 = ChannelAttentionParams<double>::init();
    GlobalContextParams<double> gc0 = random_context_params(4, 2, rng);
    gc0.wv2_w = TensorD::zeros({4, 2, 1, 1});
    gc0.wv2_b = TensorD::zeros({4});
    TensorD doubled = dual_attention<double>(nullptr, a, ca0, gc0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(doubled[i] == 2.0 * a[i]);

    // random settings -> exact sum of the two block outputs
    ChannelAttentionParams<double> ca{TensorD({1}, {0.4})};
    GlobalContextParams<double> gc = random_context_params(4, 2, rng);
    TensorD fused = dual_attention<double>(nullptr, a, ca, gc);
    TensorD sum = add<double>(nullptr, channel_attention<double>(nullptr, a, ca),
                              global_context_attention<double>(nullptr, a, gc));
    CHECK(fused.shape() == a.shape());
    CHECK(oracle::max_abs_diff(fused, sum) == 0.0);
}

TEST_CASE("attention gate saturates to pass-through or shut-off with extreme psi bias") {
    RngState rng(33);
    TensorD skip = random_normal<double>({1, 4, 8, 8}, rng);
    TensorD gate = random_normal<double>({1, 8, 4, 4}, rng);
    AttentionGateParams<double> p = AttentionGateParams<double>::init(4, 8, rng);
    p.psi_w = TensorD::zeros({1, 2, 1, 1});

    p.psi_b = TensorD({1}, {20.0});
    TensorD open = attention_gate<double>(nullptr, skip, gate, p);
    CHECK(oracle::max_abs_diff(open, skip) <= 1e-6);

    p.psi_b = TensorD({1}, {-20.0});
    TensorD closed = attention_gate<double>(nullptr, skip, gate, p);
    for (std::size_t i = 0; i < closed.size(); ++i) CHECK(std::fabs(closed[i]) <= 1e-6);
}

TEST_CASE("attention gate matches the step-by-step additive-attention oracle") {
    RngState rng(34);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD skip = random_normal<double>({1, 4, 8, 8}, rng);
        TensorD gate = random_normal<double>({1, 8, 4, 4}, rng);
        AttentionGateParams<double> p = AttentionGateParams<double>::init(4, 8, rng);
        p.psi_b = random_normal<double>({1}, rng, 0.0, 0.5);
        TensorD got = attention_gate<double>(nullptr, skip, gate, p);
        TensorD want = oracle::attention_gate(skip, gate, p.wx_w, p.wg_w, p.psi_w, p.psi_b[0]);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("attention gate coefficients lie strictly in (0,1)") {
    RngState rng(35);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD skip = random_normal<double>({2, 4, 8, 8}, rng);
        TensorD gate = random_normal<double>({2, 8, 4, 4}, rng);
        AttentionGateParams<double> p = AttentionGateParams<double>::init(4, 8, rng);
        TensorD alpha = attention_gate_coefficients<double>(nullptr, skip, gate, p);
        CHECK(alpha.shape() == Shape{2, 1, 8, 8});
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            CHECK(alpha[i] > 0.0);
            CHECK(alpha[i] < 1.0);
        }
    }
}

TEST_CASE("attention gate rejects spatial mismatches") {
    RngState rng(36);
    TensorD skip = random_normal<double>({1, 4, 8, 8}, rng);
    AttentionGateParams<double> p = AttentionGateParams<double>::init(4, 8, rng);
    TensorD gate_bad = random_normal<double>({1, 8, 3, 4}, rng);
    CHECK_THROWS_AS(attention_gate<double>(nullptr, skip, gate_bad, p), ShapeError);
    TensorD gate_same = random_normal<double>({1, 8, 8, 8}, rng);
    CHECK_THROWS_AS(attention_gate<double>(nullptr, skip, gate_same, p), ShapeError);
}

TEST_CASE("F_int follows max(Cskip/2, 1)") {
    RngState rng(37);
    AttentionGateParams<double> wide = AttentionGateParams<double>::init(8, 16, rng);
    CHECK(wide.wx_w.dim(0) == 4);
    AttentionGateParams<double> narrow_skip = AttentionGateParams<double>::init(1, 2, rng);
    CHECK(narrow_skip.wx_w.dim(0) == 1);
}

TEST_CASE("gradcheck: a linear program matches to 1e-10, a sigmoid chain to 1e-6") {
    RngState rng(90);

    auto linear = [](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return reduce_sum(&tape, add(&tape, scale(&tape, in[0], 3.0), in[1]));
    };
    auto lin_report =
        gradcheck(linear, {random_normal<double>({5}, rng), random_normal<double>({5}, rng)},
                  {"x", "y"}, RngState(7).split(1));
    CHECK(lin_report.pass(1e-10));

    auto chain = [](GradTape<double>& tape, const std::vector<TensorD>& in) {
        return reduce_sum(&tape, sigmoid(&tape, sigmoid(&tape, in[0])));
    };
    auto chain_report =
        gradcheck(chain, {random_normal<double>({8}, rng)}, {"x"}, RngState(8).split(1));
    CHECK(chain_report.pass(1e-6));
}

TEST_CASE("gradcheck rejects a deliberately wrong backward") {
    // negative control for the checker itself: a tape node whose backward
    // inflates the gradient by 1% must be flagged
    auto program = [](GradTape<double>& tape, const std::vector<TensorD>& in) {
        const TensorD& x = in[0];
        std::vector<double> sq(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) sq[i] = x[i] * x[i];
        TensorD out(x.shape(), std::move(sq));
        const int xid = tape.node_of(x);
        TensorD saved = x.detached();
        const int node = tape.record(
            "bad_square", {xid}, out.shape(),
            [xid, saved](const TensorD& up, GradTape<double>::Gradients& grads) {
                std::vector<double> g(saved.size());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * 2.02 * saved[i];
                grads.accumulate(xid, TensorD(saved.shape(), std::move(g)));
            });
        return reduce_sum(&tape, out.with_node(&tape, node));
    };
    RngState rng(38);
    auto report = gradcheck(program, {random_uniform<double>({6}, rng, 0.5, 1.5)}, {"x"},
                            RngState(1).split(RngState::kData));
    CHECK_FALSE(report.pass(1e-4));
    CHECK(report.max_rel_err > 1e-3);
    CHECK_FALSE(report.worst.empty());  // failing reports list worst coordinates
    CHECK(report.worst.front().rel_err == report.max_rel_err);
}

TEST_CASE("attention blocks pass gradcheck in f64") {
    RngState rng(39);

    SUBCASE("channel") {
        TensorD a = random_normal<double>({1, 3, 3, 3}, rng);
        TensorD beta({1}, {0.5});
        auto program = [](GradTape<double>& tape, const std::vector<TensorD>& in) {
            ChannelAttentionParams<double> p{in[1]};
            return reduce_sum(&tape, channel_attention(&tape, in[0], p));
        };
        auto report = gradcheck(program, {a, beta}, {"a", "beta"}, RngState(2).split(1));
        CHECK(report.pass(1e-4));
    }

    SUBCASE("global context") {
        TensorD a = random_normal<double>({1, 4, 3, 3}, rng);
        GlobalContextParams<double> p = random_context_params(4, 2, rng);
        auto program = [p](GradTape<double>& tape, const std::vector<TensorD>& in) {
            GlobalContextParams<double> q = p;
            q.wk_w = in[1];
            q.wv1_w = in[2];
            q.wv2_w = in[3];
            q.ln_gain = in[4];
            return reduce_sum(&tape, global_context_attention(&tape, in[0], q));
        };
        auto report = gradcheck(program, {a, p.wk_w, p.wv1_w, p.wv2_w, p.ln_gain},
                                {"a", "wk", "wv1", "wv2", "gain"}, RngState(3).split(1));
        CHECK(report.pass(1e-4));
    }

    SUBCASE("attention gate") {
        TensorD skip = random_normal<double>({1, 2, 4, 4}, rng);
        TensorD gate = random_normal<double>({1, 4, 2, 2}, rng);
        AttentionGateParams<double> p = AttentionGateParams<double>::init(2, 4, rng);
        auto program = [p](GradTape<double>& tape, const std::vector<TensorD>& in) {
            AttentionGateParams<double> q = p;
            q.wx_w = in[2];
            q.wg_w = in[3];
            q.psi_w = in[4];
            q.psi_b = in[5];
            return reduce_sum(&tape, attention_gate(&tape, in[0], in[1], q));
        };
        auto report = gradcheck(program, {skip, gate, p.wx_w, p.wg_w, p.psi_w, p.psi_b},
                                {"skip", "gate", "wx", "wg", "psi_w", "psi_b"},
                                RngState(4).split(1));
        CHECK(report.pass(1e-4));
    }
}
