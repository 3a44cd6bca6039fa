#include <doctest.h>

#include "maunet/ops.hpp"
#include "maunet/rng.hpp"
#include "oracles.hpp"

using namespace maunet;

TEST_CASE("conv2d: 3x3 all-ones kernel over all-ones input counts the overlap") {
    TensorF in = TensorF::full({1, 1, 3, 3}, 1.0f);
    TensorF w = TensorF::full({1, 1, 3, 3}, 1.0f);
    TensorF b = TensorF::zeros({1});
    TensorF out = conv2d<float>(nullptr, in, w, b, 1, 1);
    CHECK(out.at({0, 0, 1, 1}) == 9.0f);  // center: full window
    CHECK(out.at({0, 0, 0, 1}) == 6.0f);  // edge-center
    CHECK(out.at({0, 0, 0, 0}) == 4.0f);  // corner
}

TEST_CASE("conv2d: delta kernel is the identity") {
    RngState rng(3);
    TensorF in = random_normal<float>({2, 1, 5, 7}, rng);
    std::vector<float> kernel(9, 0.0f);
    kernel[4] = 1.0f;  // center tap
    TensorF w({1, 1, 3, 3}, std::move(kernel));
    TensorF out = conv2d_nobias<float>(nullptr, in, w, 1, 1);
    CHECK(out.values() == in.values());
}

TEST_CASE("conv2d: shape and configuration errors") {
    TensorF in = TensorF::zeros({1, 3, 8, 8});
    TensorF w_bad_cin = TensorF::zeros({4, 2, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d_nobias<float>(nullptr, in, w_bad_cin, 1, 1),
                         doctest::Contains("channel axis 1"), ShapeError);
    TensorF w_even = TensorF::zeros({4, 3, 2, 2});
    CHECK_THROWS_AS(conv2d_nobias<float>(nullptr, in, w_even, 1, 1), ConfigError);
    TensorF w = TensorF::zeros({4, 3, 3, 3});
    // (8 - 3) is not divisible by stride 2: output size is not an integer
    CHECK_THROWS_AS(conv2d_nobias<float>(nullptr, in, w, 2, 0), ConfigError);
    TensorF b_bad = TensorF::zeros({5});
    CHECK_THROWS_AS(conv2d<float>(nullptr, in, w, b_bad, 1, 1), ShapeError);
}

TEST_CASE("conv2d matches the quadruple-loop oracle") {
    RngState rng(11);
    for (int rep = 0; rep < 25; ++rep) {
        TensorF in = random_normal<float>({2, 3, 8, 8}, rng);
        TensorF w = random_normal<float>({4, 3, 3, 3}, rng);
        TensorF b = random_normal<float>({4}, rng);
        const int pad = rep % 2;
        TensorF got = conv2d<float>(nullptr, in, w, b, 1, pad);
        TensorF want = oracle::conv2d(in, w, &b, 1, pad);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
    for (int rep = 0; rep < 25; ++rep) {
        TensorD in = random_normal<double>({1, 2, 6, 6}, rng);
        TensorD w = random_normal<double>({3, 2, 3, 3}, rng);
        TensorD got = conv2d_nobias<double>(nullptr, in, w, 1, 1);
        TensorD want = oracle::conv2d<double>(in, w, nullptr, 1, 1);
        CHECK(oracle::rel_diff(got, want) <= 1e-12);
    }
}

TEST_CASE("max_pool2d: examples and errors") {
    TensorF t({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool2d<float>(nullptr, t, 2, 2).at({0, 0, 0, 0}) == 4.0f);

    TensorF c = TensorF::full({1, 3, 4, 4}, 2.5f);
    TensorF pooled = max_pool2d<float>(nullptr, c, 2, 2);
    for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == 2.5f);

    TensorF odd = TensorF::zeros({1, 1, 5, 4});
    CHECK_THROWS_AS(max_pool2d<float>(nullptr, odd, 2, 2), ConfigError);
}

TEST_CASE("max_pool2d matches the window-scan oracle exactly") {
    RngState rng(12);
    for (int rep = 0; rep < 50; ++rep) {
        TensorF in = random_normal<float>({1, 2, 8, 8}, rng);
        TensorF got = max_pool2d<float>(nullptr, in, 2, 2);
        TensorF want = oracle::max_pool2d(in, 2, 2);
        CHECK(got.values() == want.values());
    }
}

TEST_CASE("max_pool2d backward routes to the first occurrence on ties") {
    GradTapeD tape;
    TensorD in = tape.watch(TensorD({1, 1, 2, 2}, {7.0, 7.0, 7.0, 7.0}));
    TensorD out = max_pool2d(&tape, in, 2, 2);
    TensorD loss = reduce_sum(&tape, out);
    const TensorD g = tape.backward_for(tape.node_of(loss), in);
    CHECK(g[0] == 1.0);  // first scanned element wins the tie
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
}

TEST_CASE("bilinear_upsample: constants, identity, and the 2x2 -> 4x4 grid") {
    TensorD c = TensorD::full({1, 2, 3, 3}, 4.25);
    TensorD up = bilinear_upsample<double>(nullptr, c, 7, 5);
    for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(4.25).epsilon(1e-12));

    RngState rng(5);
    TensorD r = random_normal<double>({1, 1, 4, 6}, rng);
    TensorD same = bilinear_upsample<double>(nullptr, r, 4, 6);
    CHECK(same.values() == r.values());

    TensorD grid({1, 1, 2, 2}, {0, 2, 4, 6});
    TensorD four = bilinear_upsample<double>(nullptr, grid, 4, 4);
    TensorD want = oracle::bilinear_upsample(grid, 4, 4);
    CHECK(oracle::max_abs_diff(four, want) <= 1e-6);
    // half-pixel convention: first/last rows clamp, interior blends 25/75
    CHECK(four.at({0, 0, 0, 0}) == doctest::Approx(0.0));
    CHECK(four.at({0, 0, 0, 1}) == doctest::Approx(0.5));
    CHECK(four.at({0, 0, 0, 2}) == doctest::Approx(1.5));
    CHECK(four.at({0, 0, 0, 3}) == doctest::Approx(2.0));

    CHECK_THROWS_AS(bilinear_upsample<double>(nullptr, grid, 1, 4), ConfigError);
}

TEST_CASE("bilinear_upsample matches the interpolation-formula oracle") {
    RngState rng(13);
    for (int rep = 0; rep < 50; ++rep) {
        TensorF in = random_normal<float>({1, 2, 3, 5}, rng);
        TensorF got = bilinear_upsample<float>(nullptr, in, 8, 11);
        TensorF want = oracle::bilinear_upsample(in, 8, 11);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("softmax: symmetry, overflow safety, slice normalization") {
    TensorD pair({2}, {0.0, 0.0});
    TensorD sym = softmax<double>(nullptr, pair, 0);
    CHECK(sym[0] == doctest::Approx(0.5).epsilon(1e-12));

    TensorD spread({2}, {1000.0, 0.0});
    TensorD stable = softmax<double>(nullptr, spread, 0);
    CHECK(std::fabs(stable[0] - 1.0) <= 1e-12);
    CHECK(std::fabs(stable[1] - 0.0) <= 1e-12);

    RngState rng(6);
    TensorF t = random_normal<float>({3, 4, 5}, rng);
    TensorF s = softmax<float>(nullptr, t, 1);
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < 5; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) {
                const float v = s.at({b, j, i});
                CHECK(v > 0.0f);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    CHECK_THROWS_AS(softmax<float>(nullptr, t, 3), ShapeError);
}

TEST_CASE("softmax matches the 64-bit exp/sum oracle") {
    RngState rng(14);
    for (int rep = 0; rep < 50; ++rep) {
        TensorF in = random_normal<float>({4, 7}, rng);
        TensorF got = softmax<float>(nullptr, in, 1);
        TensorF want = oracle::softmax(in, 1);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("layer_norm: centering, degenerate slices, errors") {
    // per-slice mean 5 -> output mean 0 before affine
    TensorD in({2, 4}, {4, 5, 6, 5, 5, 7, 3, 5});
    TensorD gain = TensorD::full({4}, 1.0);
    TensorD offset = TensorD::zeros({4});
    TensorD out = layer_norm<double>(nullptr, in, {1}, gain, offset);
    for (int s = 0; s < 2; ++s) {
        double mean = 0.0;
        for (int j = 0; j < 4; ++j) mean += out.at({s, j});
        CHECK(std::fabs(mean / 4.0) <= 1e-6);
    }

    // constant slice: zeros before affine, variance guarded by eps
    TensorD flat = TensorD::full({1, 3}, 2.0);
    TensorD z = layer_norm<double>(nullptr, flat, {1}, TensorD::full({3}, 1.0), TensorD::zeros({3}));
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

    CHECK_THROWS_AS(
        layer_norm<double>(nullptr, TensorD::zeros({2, 0}), {1}, TensorD::zeros({0}), TensorD::zeros({0})),
        ConfigError);
    CHECK_THROWS_AS(layer_norm<double>(nullptr, in, {1}, TensorD::zeros({3}), TensorD::zeros({4})),
                    ShapeError);
}

TEST_CASE("layer_norm matches the two-pass oracle") {
    RngState rng(15);
    for (int rep = 0; rep < 50; ++rep) {
        TensorF in = random_normal<float>({3, 4, 2, 2}, rng, 1.0, 2.0);
        TensorF gain = random_uniform<float>({4, 2, 2}, rng, 0.5, 1.5);
        TensorF offset = random_normal<float>({4, 2, 2}, rng);
        TensorF got = layer_norm<float>(nullptr, in, {1, 2, 3}, gain, offset);
        TensorF want = oracle::layer_norm_trailing(in, gain, offset);
        CHECK(oracle::rel_diff(got, want) <= 1e-6);
    }
}

TEST_CASE("matmul: identity, dot product, errors") {
    TensorD eye({2, 2}, {1, 0, 0, 1});
    TensorD m({2, 2}, {3, 4, 5, 6});
    CHECK(matmul<double>(nullptr, eye, m).values() == m.values());

    TensorD row({1, 3}, {1, 2, 3});
    TensorD col({3, 1}, {4, 5, 6});
    CHECK(matmul<double>(nullptr, row, col)[0] == 32.0);

    TensorD bad({4, 2}, std::vector<double>(8, 0.0));
    CHECK_THROWS_WITH_AS(matmul<double>(nullptr, m, bad), doctest::Contains("inner-dimension"),
                         ShapeError);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    RngState rng(16);
    for (int rep = 0; rep < 50; ++rep) {
        TensorF a = random_normal<float>({7, 5}, rng);
        TensorF b = random_normal<float>({5, 3}, rng);
        CHECK(oracle::rel_diff(matmul<float>(nullptr, a, b), oracle::matmul(a, b)) <= 1e-6);
    }
    for (int rep = 0; rep < 20; ++rep) {
        TensorD a = random_normal<double>({3, 4, 6}, rng);
        TensorD b = random_normal<double>({3, 6, 2}, rng);
        CHECK(oracle::rel_diff(matmul<double>(nullptr, a, b), oracle::matmul(a, b)) <= 1e-12);
    }
}

TEST_CASE("pointwise kinds behave as specified") {
    TensorF r({3}, {-1.0f, 0.0f, 2.0f});
    TensorF rr = relu<float>(nullptr, r);
    CHECK(rr[0] == 0.0f);
    CHECK(rr[1] == 0.0f);
    CHECK(rr[2] == 2.0f);

    CHECK(sigmoid<float>(nullptr, TensorF({1}, {0.0f}))[0] == 0.5f);

    RngState rng(17);
    TensorF a = random_normal<float>({1, 2, 4, 4}, rng);
    TensorF b = random_normal<float>({1, 3, 4, 4}, rng);
    TensorF joined = concat<float>(nullptr, {a, b}, 1);
    CHECK(joined.shape() == Shape{1, 5, 4, 4});
    CHECK(narrow(joined, 1, 0, 2).values() == a.values());
    CHECK(narrow(joined, 1, 2, 3).values() == b.values());

    TensorF tp = transpose<float>(nullptr, a, {0, 2, 3, 1});
    CHECK(tp.shape() == Shape{1, 4, 4, 2});
    CHECK(tp.at({0, 2, 3, 1}) == a.at({0, 1, 2, 3}));
    TensorF back = transpose<float>(nullptr, tp, {0, 3, 1, 2});
    CHECK(back.values() == a.values());

    TensorF sc = scale<float>(nullptr, a, -0.5);
    CHECK(sc[0] == doctest::Approx(-0.5f * a[0]));
}

TEST_CASE("broadcast_spatial repeats one vector at every position") {
    TensorD x({1, 3, 1, 1}, {1.0, 2.0, 3.0});
    TensorD t = broadcast_spatial<double>(nullptr, x, 2, 2);
    CHECK(t.at({0, 2, 1, 1}) == 3.0);

    GradTapeD tape;
    TensorD xw = tape.watch(x);
    TensorD out = broadcast_spatial(&tape, xw, 2, 2);
    TensorD loss = reduce_sum(&tape, out);
    const TensorD g = tape.backward_for(tape.node_of(loss), xw);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 4.0);  // summed over H*W
}

TEST_CASE("decimate2 keeps even coordinates and scatters gradient back") {
    TensorD x({1, 1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    TensorD d = decimate2<double>(nullptr, x);
    CHECK(d.values() == std::vector<double>{0, 2, 8, 10});
    CHECK_THROWS_AS(decimate2<double>(nullptr, TensorD::zeros({1, 1, 3, 4})), ConfigError);

    GradTapeD tape;
    TensorD xw = tape.watch(x);
    TensorD loss = reduce_sum(&tape, decimate2(&tape, xw));
    const TensorD g = tape.backward_for(tape.node_of(loss), xw);
    CHECK(g.at({0, 0, 0, 0}) == 1.0);
    CHECK(g.at({0, 0, 0, 1}) == 0.0);
    CHECK(g.at({0, 0, 2, 2}) == 1.0);
}

TEST_CASE("f64 kernels match their oracles at the verification tolerance") {
    RngState rng(18);
    for (int rep = 0; rep < 100; ++rep) {
        TensorD cin = random_normal<double>({1, 2, 6, 6}, rng);
        TensorD cw = random_normal<double>({3, 2, 3, 3}, rng);
        TensorD cb = random_normal<double>({3}, rng);
        CHECK(oracle::rel_diff(conv2d<double>(nullptr, cin, cw, cb, 1, 1),
                               oracle::conv2d(cin, cw, &cb, 1, 1)) <= 1e-12);

        TensorD pin = random_normal<double>({1, 2, 4, 4}, rng);
        CHECK(oracle::rel_diff(max_pool2d<double>(nullptr, pin, 2, 2),
                               oracle::max_pool2d(pin, 2, 2)) <= 1e-12);
        CHECK(oracle::rel_diff(bilinear_upsample<double>(nullptr, pin, 7, 9),
                               oracle::bilinear_upsample(pin, 7, 9)) <= 1e-12);

        TensorD ma = random_normal<double>({4, 3}, rng);
        TensorD mb = random_normal<double>({3, 5}, rng);
        CHECK(oracle::rel_diff(matmul<double>(nullptr, ma, mb), oracle::matmul(ma, mb)) <= 1e-12);

        TensorD sin_ = random_normal<double>({3, 6}, rng);
        CHECK(oracle::rel_diff(softmax<double>(nullptr, sin_, 1), oracle::softmax(sin_, 1)) <=
              1e-12);

        TensorD lin = random_normal<double>({2, 3, 2, 2}, rng, 1.0, 2.0);
        TensorD lg = random_uniform<double>({3, 2, 2}, rng, 0.5, 1.5);
        TensorD lo = random_normal<double>({3, 2, 2}, rng);
        CHECK(oracle::rel_diff(layer_norm<double>(nullptr, lin, {1, 2, 3}, lg, lo),
                               oracle::layer_norm_trailing(lin, lg, lo)) <= 1e-12);
    }
}

TEST_CASE("forward passes are bit-identical across runs with one seed") {
    auto run = [] {
        RngState rng(99);
        TensorF in = random_normal<float>({1, 2, 8, 8}, rng);
        TensorF w = random_normal<float>({3, 2, 3, 3}, rng);
        TensorF b = random_normal<float>({3}, rng);
        TensorF out = conv2d<float>(nullptr, in, w, b, 1, 1);
        out = max_pool2d<float>(nullptr, out, 2, 2);
        out = bilinear_upsample<float>(nullptr, out, 8, 8);
        return softmax<float>(nullptr, out, 1).values();
    };
    CHECK(run() == run());

    // and the backward pass
    auto run_backward = [] {
        RngState rng(98);
        GradTapeF tape;
        TensorF in = random_normal<float>({1, 2, 6, 6}, rng);
        TensorF w = tape.watch(random_normal<float>({3, 2, 3, 3}, rng));
        TensorF b = tape.watch(random_normal<float>({3}, rng));
        TensorF out = relu(&tape, conv2d(&tape, in, w, b, 1, 1));
        TensorF loss = reduce_sum(&tape, mul(&tape, out, out));
        auto grads = tape.backward(tape.node_of(loss));
        return grads.get_or_zero(tape.node_of(w), w.shape()).values();
    };
    CHECK(run_backward() == run_backward());
}
