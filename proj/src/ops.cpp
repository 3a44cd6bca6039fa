#include "maunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>

namespace maunet {

namespace {

// Integer division helpers that round toward -inf / +inf for possibly
// negative numerators (divisor > 0).
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] =
            s[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(shape[static_cast<std::size_t>(i + 1)]);
    }
    return s;
}

// Wraps a computed result: records the backward closure when the output
// depends on something watched on the tape.
template <typename S>
Tensor<S> finish(GradTape<S>* tape, const char* op, std::vector<int> input_ids, Tensor<S> result,
                 typename GradTape<S>::BackwardFn fn) {
    if (!tape) return result;
    bool tracked = false;
    for (int id : input_ids) tracked = tracked || id >= 0;
    if (!tracked) return result;
    std::vector<int> on_tape;
    for (int id : input_ids) {
        if (id >= 0) on_tape.push_back(id);
    }
    const int node = tape->record(op, std::move(on_tape), result.shape(), std::move(fn));
    return result.with_node(tape, node);
}

template <typename S>
std::vector<double> to_doubles(const Tensor<S>& t) {
    std::vector<double> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t[i]);
    return v;
}

template <typename S>
Tensor<S> from_doubles(Shape shape, const std::vector<double>& v, const char* op) {
    std::vector<S> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<S>(v[i]);
    ensure_finite(out, op);
    return Tensor<S>(std::move(shape), std::move(out));
}

void require(bool cond, const char* what, const std::string& detail) {
    if (!cond) throw ShapeError(std::string(what) + ": " + detail);
}

}  // namespace

template <typename S>
void ensure_finite(const std::vector<S>& values, const char* op) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(static_cast<double>(values[i]))) {
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int h2, w2;
    int stride, padding;
};

ConvDims conv_dims(const Shape& in, const Shape& weight, int stride, int padding) {
    if (in.size() != 4) {
        throw ShapeError("conv2d: input must be N x C x H x W, got " + shape_str(in));
    }
    if (weight.size() != 4) {
        throw ShapeError("conv2d: weight must be Cout x Cin x kh x kw, got " + shape_str(weight));
    }
    ConvDims d{};
    d.n = in[0];
    d.cin = in[1];
    d.h = in[2];
    d.w = in[3];
    d.cout = weight[0];
    d.kh = weight[2];
    d.kw = weight[3];
    d.stride = stride;
    d.padding = padding;
    if (weight[1] != d.cin) {
        throw ShapeError("conv2d: channel axis 1 mismatch: input Cin=" + std::to_string(d.cin) +
                         ", weight Cin=" + std::to_string(weight[1]));
    }
    if (d.kh % 2 == 0 || d.kw % 2 == 0) {
        throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(d.kh) + "x" +
                          std::to_string(d.kw));
    }
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int num_h = d.h + 2 * padding - d.kh;
    const int num_w = d.w + 2 * padding - d.kw;
    if (num_h < 0 || num_h % stride != 0 || num_w < 0 || num_w % stride != 0) {
        throw ConfigError("conv2d: output size (" + std::to_string(d.h) + "+2*" +
                          std::to_string(padding) + "-" + std::to_string(d.kh) + ")/" +
                          std::to_string(stride) + "+1 is not a positive integer");
    }
    d.h2 = num_h / stride + 1;
    d.w2 = num_w / stride + 1;
    return d;
}

// Forward core shared by the op and its weight/input gradient passes.
// Accumulates in double; per output element the reduction order is
// (ci, kh, kw), matching a naive per-output summation.
template <typename S>
std::vector<double> conv_forward_core(const ConvDims& d, const S* in, const S* w, const S* bias) {
    std::vector<double> out(static_cast<std::size_t>(d.n) * d.cout * d.h2 * d.w2, 0.0);
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < d.cout; ++co) {
            double* acc = out.data() + (static_cast<std::size_t>(n) * d.cout + co) *
                                           static_cast<std::size_t>(d.h2) * d.w2;
            if (bias) {
                const double b = static_cast<double>(bias[co]);
                for (int i = 0; i < d.h2 * d.w2; ++i) acc[i] = b;
            }
            for (int ci = 0; ci < d.cin; ++ci) {
                const S* plane = in + (static_cast<std::size_t>(n) * d.cin + ci) *
                                          static_cast<std::size_t>(d.h) * d.w;
                const S* kern = w + (static_cast<std::size_t>(co) * d.cin + ci) *
                                        static_cast<std::size_t>(d.kh) * d.kw;
                for (int r = 0; r < d.kh; ++r) {
                    const int oh_lo = std::max(0, ceil_div(d.padding - r, d.stride));
                    const int oh_hi = std::min(d.h2 - 1, floor_div(d.h - 1 + d.padding - r, d.stride));
                    for (int c = 0; c < d.kw; ++c) {
                        const double wv = static_cast<double>(kern[r * d.kw + c]);
                        const int ow_lo = std::max(0, ceil_div(d.padding - c, d.stride));
                        const int ow_hi =
                            std::min(d.w2 - 1, floor_div(d.w - 1 + d.padding - c, d.stride));
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int ih = oh * d.stride - d.padding + r;
                            const S* row = plane + static_cast<std::size_t>(ih) * d.w;
                            double* arow = acc + static_cast<std::size_t>(oh) * d.w2;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                arow[ow] += wv * static_cast<double>(row[ow * d.stride - d.padding + c]);
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename S>
Tensor<S> conv2d_impl(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                      const Tensor<S>* bias, int stride, int padding) {
    const ConvDims d = conv_dims(input.shape(), weight.shape(), stride, padding);
    if (bias && !(bias->ndim() == 1 && bias->dim(0) == d.cout)) {
        throw ShapeError("conv2d: bias axis 0 must have Cout=" + std::to_string(d.cout) +
                         " entries, got " + shape_str(bias->shape()));
    }

    std::vector<double> acc =
        conv_forward_core(d, input.data(), weight.data(), bias ? bias->data() : nullptr);
    Tensor<S> out = from_doubles<S>({d.n, d.cout, d.h2, d.w2}, acc, "conv2d");

    if (!tape) return out;
    const int in_id = tape->node_of(input);
    const int w_id = tape->node_of(weight);
    const int b_id = bias ? tape->node_of(*bias) : -1;
    if (in_id < 0 && w_id < 0 && b_id < 0) return out;

    Tensor<S> saved_in = input.detached();
    Tensor<S> saved_w = weight.detached();
    auto backward = [d, in_id, w_id, b_id, saved_in, saved_w](
                        const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        const S* g = up.data();
        const S* in = saved_in.data();
        const S* w = saved_w.data();
        std::vector<double> din, dw, db;
        if (in_id >= 0) din.assign(saved_in.size(), 0.0);
        if (w_id >= 0) dw.assign(saved_w.size(), 0.0);
        if (b_id >= 0) db.assign(static_cast<std::size_t>(d.cout), 0.0);

        for (int n = 0; n < d.n; ++n) {
            for (int co = 0; co < d.cout; ++co) {
                const S* gp = g + (static_cast<std::size_t>(n) * d.cout + co) *
                                      static_cast<std::size_t>(d.h2) * d.w2;
                if (b_id >= 0) {
                    double s = 0.0;
                    for (int i = 0; i < d.h2 * d.w2; ++i) s += static_cast<double>(gp[i]);
                    db[static_cast<std::size_t>(co)] += s;
                }
                for (int ci = 0; ci < d.cin; ++ci) {
                    const std::size_t plane_off = (static_cast<std::size_t>(n) * d.cin + ci) *
                                                  static_cast<std::size_t>(d.h) * d.w;
                    const std::size_t kern_off = (static_cast<std::size_t>(co) * d.cin + ci) *
                                                 static_cast<std::size_t>(d.kh) * d.kw;
                    for (int r = 0; r < d.kh; ++r) {
                        const int oh_lo = std::max(0, ceil_div(d.padding - r, d.stride));
                        const int oh_hi =
                            std::min(d.h2 - 1, floor_div(d.h - 1 + d.padding - r, d.stride));
                        for (int c = 0; c < d.kw; ++c) {
                            const int ow_lo = std::max(0, ceil_div(d.padding - c, d.stride));
                            const int ow_hi =
                                std::min(d.w2 - 1, floor_div(d.w - 1 + d.padding - c, d.stride));
                            double wsum = 0.0;
                            const double wv = static_cast<double>(w[kern_off + r * d.kw + c]);
                            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int ih = oh * d.stride - d.padding + r;
                                const S* grow = gp + static_cast<std::size_t>(oh) * d.w2;
                                const std::size_t irow = plane_off + static_cast<std::size_t>(ih) * d.w;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    const int iw = ow * d.stride - d.padding + c;
                                    const double gv = static_cast<double>(grow[ow]);
                                    if (w_id >= 0) {
                                        wsum += gv * static_cast<double>(in[irow + iw]);
                                    }
                                    if (in_id >= 0) din[irow + iw] += wv * gv;
                                }
                            }
                            if (w_id >= 0) dw[kern_off + r * d.kw + c] += wsum;
                        }
                    }
                }
            }
        }
        if (in_id >= 0) grads.accumulate(in_id, from_doubles<S>(saved_in.shape(), din, "conv2d.grad"));
        if (w_id >= 0) grads.accumulate(w_id, from_doubles<S>(saved_w.shape(), dw, "conv2d.grad"));
        if (b_id >= 0) grads.accumulate(b_id, from_doubles<S>({d.cout}, db, "conv2d.grad"));
    };
    return finish(tape, "conv2d", {in_id, w_id, b_id}, std::move(out), std::move(backward));
}

}  // namespace

template <typename S>
Tensor<S> conv2d(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                 const Tensor<S>& bias, int stride, int padding) {
    return conv2d_impl(tape, input, weight, &bias, stride, padding);
}

template <typename S>
Tensor<S> conv2d_nobias(GradTape<S>* tape, const Tensor<S>& input, const Tensor<S>& weight,
                        int stride, int padding) {
    return conv2d_impl<S>(tape, input, weight, nullptr, stride, padding);
}

// ---------------------------------------------------------------------------
// max_pool2d
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> max_pool2d(GradTape<S>* tape, const Tensor<S>& input, int k, int stride) {
    require(input.ndim() == 4, "max_pool2d", "input must be N x C x H x W, got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (k < 1 || stride < 1) throw ConfigError("max_pool2d: k and stride must be >= 1");
    if (h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0) {
        throw ConfigError("max_pool2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible into " + std::to_string(k) + "-windows at stride " +
                          std::to_string(stride));
    }
    const int h2 = (h - k) / stride + 1;
    const int w2 = (w - k) / stride + 1;

    const S* in = input.data();
    std::vector<S> out(static_cast<std::size_t>(n) * c * h2 * w2);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    std::size_t o = 0;
    for (int b = 0; b < n * c; ++b) {
        const std::size_t plane = static_cast<std::size_t>(b) * h * w;
        for (int oh = 0; oh < h2; ++oh) {
            for (int ow = 0; ow < w2; ++ow) {
                std::size_t best = plane + static_cast<std::size_t>(oh * stride) * w + ow * stride;
                S best_v = in[best];
                for (int r = 0; r < k; ++r) {
                    const std::size_t row = plane + static_cast<std::size_t>(oh * stride + r) * w +
                                            static_cast<std::size_t>(ow * stride);
                    for (int cc = 0; cc < k; ++cc) {
                        // strict > keeps the first occurrence on ties
                        if (in[row + cc] > best_v) {
                            best_v = in[row + cc];
                            best = row + cc;
                        }
                    }
                }
                out[o] = best_v;
                (*argmax)[o] = static_cast<std::int64_t>(best);
                ++o;
            }
        }
    }
    ensure_finite(out, "max_pool2d");
    Tensor<S> result({n, c, h2, w2}, std::move(out));

    if (!tape) return result;
    const int in_id = tape->node_of(input);
    if (in_id < 0) return result;
    const Shape in_shape = input.shape();
    const std::size_t in_size = input.size();
    auto backward = [in_id, in_shape, in_size, argmax](const Tensor<S>& up,
                                                       typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(in_size, S(0));
        for (std::size_t i = 0; i < up.size(); ++i) {
            din[static_cast<std::size_t>((*argmax)[i])] += up[i];
        }
        grads.accumulate(in_id, Tensor<S>(in_shape, std::move(din)));
    };
    return finish(tape, "max_pool2d", {in_id}, std::move(result), std::move(backward));
}

// ---------------------------------------------------------------------------
// bilinear_upsample
// ---------------------------------------------------------------------------

namespace {

struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<double> t;
};

LerpAxis lerp_axis(int in, int out) {
    LerpAxis ax;
    ax.lo.resize(static_cast<std::size_t>(out));
    ax.hi.resize(static_cast<std::size_t>(out));
    ax.t.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
        const int lo = static_cast<int>(src);
        ax.lo[static_cast<std::size_t>(d)] = lo;
        ax.hi[static_cast<std::size_t>(d)] = std::min(lo + 1, in - 1);
        ax.t[static_cast<std::size_t>(d)] = src - static_cast<double>(lo);
    }
    return ax;
}

}  // namespace

template <typename S>
Tensor<S> bilinear_upsample(GradTape<S>* tape, const Tensor<S>& input, int out_h, int out_w) {
    require(input.ndim() == 4, "bilinear_upsample",
            "input must be N x C x H x W, got " + shape_str(input.shape()));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (out_h < h || out_w < w) {
        throw ConfigError("bilinear_upsample: target " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " is smaller than source " + std::to_string(h) +
                          "x" + std::to_string(w));
    }
    auto ah = std::make_shared<LerpAxis>(lerp_axis(h, out_h));
    auto aw = std::make_shared<LerpAxis>(lerp_axis(w, out_w));

    const S* in = input.data();
    std::vector<S> out(static_cast<std::size_t>(n) * c * out_h * out_w);
    std::size_t o = 0;
    for (int b = 0; b < n * c; ++b) {
        const S* plane = in + static_cast<std::size_t>(b) * h * w;
        for (int y = 0; y < out_h; ++y) {
            const std::size_t r0 = static_cast<std::size_t>(ah->lo[static_cast<std::size_t>(y)]) * w;
            const std::size_t r1 = static_cast<std::size_t>(ah->hi[static_cast<std::size_t>(y)]) * w;
            const double ty = ah->t[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                const int x0 = aw->lo[static_cast<std::size_t>(x)];
                const int x1 = aw->hi[static_cast<std::size_t>(x)];
                const double tx = aw->t[static_cast<std::size_t>(x)];
                const double top = (1.0 - tx) * static_cast<double>(plane[r0 + x0]) +
                                   tx * static_cast<double>(plane[r0 + x1]);
                const double bot = (1.0 - tx) * static_cast<double>(plane[r1 + x0]) +
                                   tx * static_cast<double>(plane[r1 + x1]);
                out[o++] = static_cast<S>((1.0 - ty) * top + ty * bot);
            }
        }
    }
    ensure_finite(out, "bilinear_upsample");
    Tensor<S> result({n, c, out_h, out_w}, std::move(out));

    if (!tape) return result;
    const int in_id = tape->node_of(input);
    if (in_id < 0) return result;
    const Shape in_shape = input.shape();
    auto backward = [in_id, in_shape, n, c, h, w, out_h, out_w, ah, aw](
                        const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        std::vector<double> din(static_cast<std::size_t>(n) * c * h * w, 0.0);
        const S* g = up.data();
        std::size_t o = 0;
        for (int b = 0; b < n * c; ++b) {
            double* plane = din.data() + static_cast<std::size_t>(b) * h * w;
            for (int y = 0; y < out_h; ++y) {
                const std::size_t r0 = static_cast<std::size_t>(ah->lo[static_cast<std::size_t>(y)]) * w;
                const std::size_t r1 = static_cast<std::size_t>(ah->hi[static_cast<std::size_t>(y)]) * w;
                const double ty = ah->t[static_cast<std::size_t>(y)];
                for (int x = 0; x < out_w; ++x) {
                    const int x0 = aw->lo[static_cast<std::size_t>(x)];
                    const int x1 = aw->hi[static_cast<std::size_t>(x)];
                    const double tx = aw->t[static_cast<std::size_t>(x)];
                    const double gv = static_cast<double>(g[o++]);
                    plane[r0 + x0] += gv * (1.0 - ty) * (1.0 - tx);
                    plane[r0 + x1] += gv * (1.0 - ty) * tx;
                    plane[r1 + x0] += gv * ty * (1.0 - tx);
                    plane[r1 + x1] += gv * ty * tx;
                }
            }
        }
        grads.accumulate(in_id, from_doubles<S>(in_shape, din, "bilinear_upsample.grad"));
    };
    return finish(tape, "bilinear_upsample", {in_id}, std::move(result), std::move(backward));
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(GradTape<S>* tape, const Tensor<S>& input, int axis) {
    if (axis < 0 || axis >= input.ndim()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(input.shape()));
    }
    std::size_t outer = 1, inner = 1;
    const std::size_t len = static_cast<std::size_t>(input.dim(axis));
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(input.dim(a));
    for (int a = axis + 1; a < input.ndim(); ++a) inner *= static_cast<std::size_t>(input.dim(a));

    const S* in = input.data();
    std::vector<S> out(input.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double mx = static_cast<double>(in[base]);
            for (std::size_t j = 1; j < len; ++j) {
                mx = std::max(mx, static_cast<double>(in[base + j * inner]));
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                sum += std::exp(static_cast<double>(in[base + j * inner]) - mx);
            }
            for (std::size_t j = 0; j < len; ++j) {
                out[base + j * inner] =
                    static_cast<S>(std::exp(static_cast<double>(in[base + j * inner]) - mx) / sum);
            }
        }
    }
    ensure_finite(out, "softmax");
    Tensor<S> result(input.shape(), std::move(out));

    if (!tape) return result;
    const int in_id = tape->node_of(input);
    if (in_id < 0) return result;
    Tensor<S> y = result.detached();
    auto backward = [in_id, y, outer, inner, len](const Tensor<S>& up,
                                                  typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(y.size());
        const S* g = up.data();
        const S* yv = y.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t p = base + j * inner;
                    dot += static_cast<double>(g[p]) * static_cast<double>(yv[p]);
                }
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t p = base + j * inner;
                    din[p] = static_cast<S>(static_cast<double>(yv[p]) *
                                            (static_cast<double>(g[p]) - dot));
                }
            }
        }
        grads.accumulate(in_id, Tensor<S>(y.shape(), std::move(din)));
    };
    return finish(tape, "softmax", {in_id}, std::move(result), std::move(backward));
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

namespace {

struct NormPlan {
    std::size_t slice_len = 1;   // elements normalized together
    std::size_t n_slices = 1;
    std::vector<std::size_t> slice_id;  // per flat element
    std::vector<std::size_t> param_id;  // per flat element (gain/offset index)
    Shape param_shape;
};

NormPlan norm_plan(const Shape& shape, const std::vector<int>& axes) {
    const int nd = static_cast<int>(shape.size());
    std::vector<bool> normed(static_cast<std::size_t>(nd), false);
    for (int a : axes) {
        if (a < 0 || a >= nd) {
            throw ShapeError("layer_norm: axis " + std::to_string(a) + " invalid for shape " +
                             shape_str(shape));
        }
        if (normed[static_cast<std::size_t>(a)]) {
            throw ShapeError("layer_norm: duplicate axis " + std::to_string(a));
        }
        normed[static_cast<std::size_t>(a)] = true;
    }
    if (axes.empty()) throw ConfigError("layer_norm: empty axis set");

    NormPlan plan;
    for (int a = 0; a < nd; ++a) {
        if (normed[static_cast<std::size_t>(a)]) {
            plan.slice_len *= static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]);
            plan.param_shape.push_back(shape[static_cast<std::size_t>(a)]);
        } else {
            plan.n_slices *= static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]);
        }
    }
    if (plan.slice_len == 0) throw ConfigError("layer_norm: zero-size normalization slice");

    const std::size_t total = numel(shape);
    plan.slice_id.resize(total);
    plan.param_id.resize(total);
    std::vector<int> coord(static_cast<std::size_t>(nd), 0);
    for (std::size_t f = 0; f < total; ++f) {
        std::size_t sid = 0, pid = 0;
        for (int a = 0; a < nd; ++a) {
            if (normed[static_cast<std::size_t>(a)]) {
                pid = pid * static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]) +
                      static_cast<std::size_t>(coord[static_cast<std::size_t>(a)]);
            } else {
                sid = sid * static_cast<std::size_t>(shape[static_cast<std::size_t>(a)]) +
                      static_cast<std::size_t>(coord[static_cast<std::size_t>(a)]);
            }
        }
        plan.slice_id[f] = sid;
        plan.param_id[f] = pid;
        for (int a = nd - 1; a >= 0; --a) {
            if (++coord[static_cast<std::size_t>(a)] < shape[static_cast<std::size_t>(a)]) break;
            coord[static_cast<std::size_t>(a)] = 0;
        }
    }
    return plan;
}

}  // namespace

template <typename S>
Tensor<S> layer_norm(GradTape<S>* tape, const Tensor<S>& input, const std::vector<int>& axes,
                     const Tensor<S>& gain, const Tensor<S>& offset, double eps) {
    auto plan = std::make_shared<NormPlan>(norm_plan(input.shape(), axes));
    if (gain.size() != plan->slice_len || offset.size() != plan->slice_len) {
        throw ShapeError("layer_norm: gain/offset must cover the normalized axes " +
                         shape_str(plan->param_shape) + ", got " + shape_str(gain.shape()) +
                         " and " + shape_str(offset.shape()));
    }

    const S* in = input.data();
    const std::size_t total = input.size();
    const double m = static_cast<double>(plan->slice_len);

    std::vector<double> mean(plan->n_slices, 0.0);
    for (std::size_t f = 0; f < total; ++f) mean[plan->slice_id[f]] += static_cast<double>(in[f]);
    for (auto& v : mean) v /= m;
    std::vector<double> var(plan->n_slices, 0.0);
    for (std::size_t f = 0; f < total; ++f) {
        const double d = static_cast<double>(in[f]) - mean[plan->slice_id[f]];
        var[plan->slice_id[f]] += d * d;
    }
    auto invstd = std::make_shared<std::vector<double>>(plan->n_slices);
    for (std::size_t s = 0; s < plan->n_slices; ++s) {
        (*invstd)[s] = 1.0 / std::sqrt(var[s] / m + eps);
    }

    auto xhat = std::make_shared<std::vector<double>>(total);
    std::vector<S> out(total);
    const S* gv = gain.data();
    const S* bv = offset.data();
    for (std::size_t f = 0; f < total; ++f) {
        const double xh = (static_cast<double>(in[f]) - mean[plan->slice_id[f]]) *
                          (*invstd)[plan->slice_id[f]];
        (*xhat)[f] = xh;
        out[f] = static_cast<S>(xh * static_cast<double>(gv[plan->param_id[f]]) +
                                static_cast<double>(bv[plan->param_id[f]]));
    }
    ensure_finite(out, "layer_norm");
    Tensor<S> result(input.shape(), std::move(out));

    if (!tape) return result;
    const int in_id = tape->node_of(input);
    const int g_id = tape->node_of(gain);
    const int b_id = tape->node_of(offset);
    if (in_id < 0 && g_id < 0 && b_id < 0) return result;
    Tensor<S> saved_gain = gain.detached();
    const Shape in_shape = input.shape();
    const Shape gain_shape = gain.shape();
    const Shape offset_shape = offset.shape();
    auto backward = [plan, invstd, xhat, saved_gain, in_id, g_id, b_id, in_shape, gain_shape,
                     offset_shape, m](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        const std::size_t total = xhat->size();
        const S* g = up.data();
        if (g_id >= 0 || b_id >= 0) {
            std::vector<double> dgain(plan->slice_len, 0.0), doffset(plan->slice_len, 0.0);
            for (std::size_t f = 0; f < total; ++f) {
                dgain[plan->param_id[f]] += static_cast<double>(g[f]) * (*xhat)[f];
                doffset[plan->param_id[f]] += static_cast<double>(g[f]);
            }
            if (g_id >= 0) grads.accumulate(g_id, from_doubles<S>(gain_shape, dgain, "layer_norm.grad"));
            if (b_id >= 0) grads.accumulate(b_id, from_doubles<S>(offset_shape, doffset, "layer_norm.grad"));
        }
        if (in_id >= 0) {
            // ghat = upstream * gain; dx = invstd * (ghat - mean(ghat) - xhat * mean(ghat*xhat))
            std::vector<double> sum1(plan->n_slices, 0.0), sum2(plan->n_slices, 0.0);
            std::vector<double> ghat(total);
            const S* gw = saved_gain.data();
            for (std::size_t f = 0; f < total; ++f) {
                ghat[f] = static_cast<double>(g[f]) * static_cast<double>(gw[plan->param_id[f]]);
                sum1[plan->slice_id[f]] += ghat[f];
                sum2[plan->slice_id[f]] += ghat[f] * (*xhat)[f];
            }
            std::vector<double> din(total);
            for (std::size_t f = 0; f < total; ++f) {
                const std::size_t s = plan->slice_id[f];
                din[f] = (*invstd)[s] * (ghat[f] - sum1[s] / m - (*xhat)[f] * sum2[s] / m);
            }
            grads.accumulate(in_id, from_doubles<S>(in_shape, din, "layer_norm.grad"));
        }
    };
    return finish(tape, "layer_norm", {in_id, g_id, b_id}, std::move(result), std::move(backward));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

struct MatDims {
    std::size_t batch;
    std::size_t m, k, n;
    bool batched;
};

MatDims mat_dims(const Shape& a, const Shape& b) {
    if (!((a.size() == 2 && b.size() == 2) || (a.size() == 3 && b.size() == 3))) {
        throw ShapeError("matmul: operands must both be 2-d or both 3-d, got " + shape_str(a) +
                         " and " + shape_str(b));
    }
    MatDims d{};
    d.batched = a.size() == 3;
    d.batch = d.batched ? static_cast<std::size_t>(a[0]) : 1;
    if (d.batched && a[0] != b[0]) {
        throw ShapeError("matmul: batch axis 0 mismatch: " + std::to_string(a[0]) + " vs " +
                         std::to_string(b[0]));
    }
    const std::size_t off = d.batched ? 1 : 0;
    d.m = static_cast<std::size_t>(a[off]);
    d.k = static_cast<std::size_t>(a[off + 1]);
    d.n = static_cast<std::size_t>(b[off + 1]);
    if (a[off + 1] != b[off]) {
        throw ShapeError("matmul: inner-dimension mismatch: " + shape_str(a) + " x " + shape_str(b));
    }
    return d;
}

// C[m,n] (+)= A[m,k] * B[k,n], optionally transposing either operand view.
template <typename S>
void matmul_core(const S* a, bool ta, const S* b, bool tb, std::size_t m, std::size_t k,
                 std::size_t n, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = static_cast<double>(ta ? a[p * m + i] : a[i * k + p]);
                const double bv = static_cast<double>(tb ? b[j * k + p] : b[p * n + j]);
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

}  // namespace

template <typename S>
Tensor<S> matmul(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    const MatDims d = mat_dims(a.shape(), b.shape());
    Shape out_shape = d.batched ? Shape{static_cast<int>(d.batch), static_cast<int>(d.m),
                                        static_cast<int>(d.n)}
                                : Shape{static_cast<int>(d.m), static_cast<int>(d.n)};
    std::vector<double> acc(d.batch * d.m * d.n, 0.0);
    for (std::size_t bt = 0; bt < d.batch; ++bt) {
        matmul_core(a.data() + bt * d.m * d.k, false, b.data() + bt * d.k * d.n, false, d.m, d.k,
                    d.n, acc.data() + bt * d.m * d.n);
    }
    Tensor<S> result = from_doubles<S>(out_shape, acc, "matmul");

    if (!tape) return result;
    const int a_id = tape->node_of(a);
    const int b_id = tape->node_of(b);
    if (a_id < 0 && b_id < 0) return result;
    Tensor<S> sa = a.detached(), sb = b.detached();
    auto backward = [d, a_id, b_id, sa, sb](const Tensor<S>& up,
                                            typename GradTape<S>::Gradients& grads) {
        const S* g = up.data();
        if (a_id >= 0) {
            // dA = G * B^T
            std::vector<double> da(sa.size(), 0.0);
            for (std::size_t bt = 0; bt < d.batch; ++bt) {
                matmul_core(g + bt * d.m * d.n, false, sb.data() + bt * d.k * d.n, true, d.m, d.n,
                            d.k, da.data() + bt * d.m * d.k);
            }
            grads.accumulate(a_id, from_doubles<S>(sa.shape(), da, "matmul.grad"));
        }
        if (b_id >= 0) {
            // dB = A^T * G
            std::vector<double> db(sb.size(), 0.0);
            for (std::size_t bt = 0; bt < d.batch; ++bt) {
                matmul_core(sa.data() + bt * d.m * d.k, true, g + bt * d.m * d.n, false, d.k, d.m,
                            d.n, db.data() + bt * d.k * d.n);
            }
            grads.accumulate(b_id, from_doubles<S>(sb.shape(), db, "matmul.grad"));
        }
    };
    return finish(tape, "matmul", {a_id, b_id}, std::move(result), std::move(backward));
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(GradTape<S>* tape, const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
    ensure_finite(out, "relu");
    Tensor<S> result(x.shape(), std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    Tensor<S> sx = x.detached();
    auto backward = [in_id, sx](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(sx.size());
        // subgradient at exactly 0 is 0
        for (std::size_t i = 0; i < sx.size(); ++i) din[i] = sx[i] > S(0) ? up[i] : S(0);
        grads.accumulate(in_id, Tensor<S>(sx.shape(), std::move(din)));
    };
    return finish(tape, "relu", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> sigmoid(GradTape<S>* tape, const Tensor<S>& x) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x[i]);
        const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = static_cast<S>(y);
    }
    ensure_finite(out, "sigmoid");
    Tensor<S> result(x.shape(), std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    Tensor<S> y = result.detached();
    auto backward = [in_id, y](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double yy = static_cast<double>(y[i]);
            din[i] = static_cast<S>(static_cast<double>(up[i]) * yy * (1.0 - yy));
        }
        grads.accumulate(in_id, Tensor<S>(y.shape(), std::move(din)));
    };
    return finish(tape, "sigmoid", {in_id}, std::move(result), std::move(backward));
}

namespace {

enum class BinKind { Add, Mul };

// Identical shapes, or exactly one side a 1-element scalar.
template <typename S>
Tensor<S> binary_op(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b, BinKind kind) {
    const char* name = kind == BinKind::Add ? "add" : "mul";
    const bool a_scalar = a.size() == 1 && !same_shape(a.shape(), b.shape());
    const bool b_scalar = b.size() == 1 && !same_shape(a.shape(), b.shape());
    if (!same_shape(a.shape(), b.shape()) && !a_scalar && !b_scalar) {
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + " (only identical shapes or a scalar broadcast)");
    }
    const Tensor<S>& big = a_scalar ? b : a;
    std::vector<S> out(big.size());
    if (kind == BinKind::Add) {
        if (a_scalar || b_scalar) {
            const S s = a_scalar ? a[0] : b[0];
            const S* v = big.data();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] + s;
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        }
    } else {
        if (a_scalar || b_scalar) {
            const S s = a_scalar ? a[0] : b[0];
            const S* v = big.data();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * s;
        } else {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        }
    }
    ensure_finite(out, name);
    Tensor<S> result(big.shape(), std::move(out));

    if (!tape) return result;
    const int a_id = tape->node_of(a);
    const int b_id = tape->node_of(b);
    if (a_id < 0 && b_id < 0) return result;
    Tensor<S> sa = a.detached(), sb = b.detached();
    auto backward = [kind, a_id, b_id, sa, sb, a_scalar, b_scalar](
                        const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        auto side_grad = [&](const Tensor<S>& self, const Tensor<S>& other, bool self_scalar,
                             bool other_scalar) -> Tensor<S> {
            // d(a+b)/da = 1 ; d(a*b)/da = b
            std::vector<double> factor;  // empty means all-ones
            if (kind == BinKind::Mul) {
                if (other_scalar) {
                    std::vector<S> g(up.size());
                    const S s = other[0];
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * s;
                    if (self_scalar) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]);
                        return Tensor<S>(self.shape(), {static_cast<S>(acc)});
                    }
                    return Tensor<S>(self.shape(), std::move(g));
                }
                if (self_scalar) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < up.size(); ++i) {
                        acc += static_cast<double>(up[i]) * static_cast<double>(other[i]);
                    }
                    return Tensor<S>(self.shape(), {static_cast<S>(acc)});
                }
                std::vector<S> g(up.size());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * other[i];
                return Tensor<S>(self.shape(), std::move(g));
            }
            // Add
            if (self_scalar) {
                double acc = 0.0;
                for (std::size_t i = 0; i < up.size(); ++i) acc += static_cast<double>(up[i]);
                return Tensor<S>(self.shape(), {static_cast<S>(acc)});
            }
            return Tensor<S>(self.shape(), std::vector<S>(up.values()));
        };
        if (a_id >= 0) grads.accumulate(a_id, side_grad(sa, sb, a_scalar, b_scalar));
        if (b_id >= 0) grads.accumulate(b_id, side_grad(sb, sa, b_scalar, a_scalar));
    };
    return finish(tape, name, {a_id, b_id}, std::move(result), std::move(backward));
}

}  // namespace

template <typename S>
Tensor<S> add(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(tape, a, b, BinKind::Add);
}

template <typename S>
Tensor<S> mul(GradTape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op(tape, a, b, BinKind::Mul);
}

template <typename S>
Tensor<S> scale(GradTape<S>* tape, const Tensor<S>& x, double c) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<S>(static_cast<double>(x[i]) * c);
    ensure_finite(out, "scale");
    Tensor<S> result(x.shape(), std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    auto backward = [in_id, c](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(up.size());
        for (std::size_t i = 0; i < up.size(); ++i) {
            din[i] = static_cast<S>(static_cast<double>(up[i]) * c);
        }
        grads.accumulate(in_id, Tensor<S>(up.shape(), std::move(din)));
    };
    return finish(tape, "scale", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> concat(GradTape<S>* tape, const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat: empty input list");
    const Shape& first = parts.front().shape();
    if (axis < 0 || axis >= static_cast<int>(first.size())) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for " + shape_str(first));
    }
    int axis_total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != static_cast<int>(first.size())) {
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
        }
        for (int a = 0; a < p.ndim(); ++a) {
            if (a != axis && p.dim(a) != first[static_cast<std::size_t>(a)]) {
                throw ShapeError("concat: axis " + std::to_string(a) + " mismatch: " +
                                 shape_str(p.shape()) + " vs " + shape_str(first));
            }
        }
        axis_total += p.dim(axis);
    }
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(first[static_cast<std::size_t>(a)]);
    for (int a = axis + 1; a < static_cast<int>(first.size()); ++a) {
        inner *= static_cast<std::size_t>(first[static_cast<std::size_t>(a)]);
    }

    std::vector<S> out(numel(out_shape));
    std::size_t axis_off = 0;
    for (const auto& p : parts) {
        const std::size_t chunk = static_cast<std::size_t>(p.dim(axis)) * inner;
        const S* src = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(src + o * chunk, src + (o + 1) * chunk,
                      out.begin() + static_cast<std::ptrdiff_t>(
                                        (o * static_cast<std::size_t>(axis_total) + axis_off) * inner));
        }
        axis_off += static_cast<std::size_t>(p.dim(axis));
    }
    ensure_finite(out, "concat");
    Tensor<S> result(std::move(out_shape), std::move(out));

    if (!tape) return result;
    std::vector<int> ids(parts.size());
    bool tracked = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        ids[i] = tape->node_of(parts[i]);
        tracked = tracked || ids[i] >= 0;
    }
    if (!tracked) return result;
    std::vector<Shape> shapes;
    std::vector<int> lens;
    for (const auto& p : parts) {
        shapes.push_back(p.shape());
        lens.push_back(p.dim(axis));
    }
    auto backward = [ids, shapes, lens, outer, inner, axis_total](
                        const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        const S* g = up.data();
        std::size_t axis_off = 0;
        for (std::size_t part = 0; part < ids.size(); ++part) {
            const std::size_t chunk = static_cast<std::size_t>(lens[part]) * inner;
            if (ids[part] >= 0) {
                std::vector<S> dg(outer * chunk);
                for (std::size_t o = 0; o < outer; ++o) {
                    const std::size_t src =
                        (o * static_cast<std::size_t>(axis_total) + axis_off) * inner;
                    std::copy(g + src, g + src + chunk,
                              dg.begin() + static_cast<std::ptrdiff_t>(o * chunk));
                }
                grads.accumulate(ids[part], Tensor<S>(shapes[part], std::move(dg)));
            }
            axis_off += static_cast<std::size_t>(lens[part]);
        }
    };
    std::vector<int> all_ids = ids;
    return finish(tape, "concat", std::move(all_ids), std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> reshape(GradTape<S>* tape, const Tensor<S>& x, Shape shape) {
    Tensor<S> result = x.detached().reshaped(std::move(shape));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    const Shape in_shape = x.shape();
    auto backward = [in_id, in_shape](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        grads.accumulate(in_id, up.reshaped(in_shape));
    };
    return finish(tape, "reshape", {in_id}, std::move(result), std::move(backward));
}

namespace {

template <typename S>
Tensor<S> transpose_core(const Tensor<S>& x, const std::vector<int>& perm) {
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out_shape[i] = x.dim(perm[i]);
    }
    const auto in_strides = strides_of(x.shape());
    const auto out_strides = strides_of(out_shape);
    const std::size_t total = x.size();
    std::vector<S> out(total);
    const S* in = x.data();
    const int nd = x.ndim();
    for (std::size_t f = 0; f < total; ++f) {
        std::size_t rem = f, src = 0;
        for (int a = 0; a < nd; ++a) {
            const std::size_t coord = rem / out_strides[static_cast<std::size_t>(a)];
            rem %= out_strides[static_cast<std::size_t>(a)];
            src += coord * in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])];
        }
        out[f] = in[src];
    }
    return Tensor<S>(std::move(out_shape), std::move(out));
}

}  // namespace

template <typename S>
Tensor<S> transpose(GradTape<S>* tape, const Tensor<S>& x, const std::vector<int>& perm) {
    if (static_cast<int>(perm.size()) != x.ndim()) {
        throw ShapeError("transpose: perm size " + std::to_string(perm.size()) +
                         " does not match rank of " + shape_str(x.shape()));
    }
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= x.ndim() || seen[static_cast<std::size_t>(p)]) {
            throw ShapeError("transpose: invalid permutation");
        }
        seen[static_cast<std::size_t>(p)] = true;
    }
    Tensor<S> result = transpose_core(x, perm);
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    auto backward = [in_id, inv](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        grads.accumulate(in_id, transpose_core(up, inv));
    };
    return finish(tape, "transpose", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> broadcast_spatial(GradTape<S>* tape, const Tensor<S>& x, int out_h, int out_w) {
    require(x.ndim() == 4 && x.dim(2) == 1 && x.dim(3) == 1, "broadcast_spatial",
            "input must be N x C x 1 x 1, got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(out_h) * out_w;
    std::vector<S> out(static_cast<std::size_t>(n) * c * hw);
    for (int b = 0; b < n * c; ++b) {
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(b * hw),
                  out.begin() + static_cast<std::ptrdiff_t>((b + 1) * hw), x[static_cast<std::size_t>(b)]);
    }
    ensure_finite(out, "broadcast_spatial");
    Tensor<S> result({n, c, out_h, out_w}, std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    auto backward = [in_id, n, c, hw](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        std::vector<S> dg(static_cast<std::size_t>(n) * c);
        for (int b = 0; b < n * c; ++b) {
            double acc = 0.0;
            const S* g = up.data() + static_cast<std::size_t>(b) * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(g[i]);
            dg[static_cast<std::size_t>(b)] = static_cast<S>(acc);
        }
        grads.accumulate(in_id, Tensor<S>({n, c, 1, 1}, std::move(dg)));
    };
    return finish(tape, "broadcast_spatial", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> broadcast_channel(GradTape<S>* tape, const Tensor<S>& x, int channels) {
    require(x.ndim() == 4 && x.dim(1) == 1, "broadcast_channel",
            "input must be N x 1 x H x W, got " + shape_str(x.shape()));
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<S> out(static_cast<std::size_t>(n) * channels * hw);
    for (int b = 0; b < n; ++b) {
        const S* src = x.data() + static_cast<std::size_t>(b) * hw;
        for (int cc = 0; cc < channels; ++cc) {
            std::copy(src, src + hw,
                      out.begin() + static_cast<std::ptrdiff_t>(
                                        (static_cast<std::size_t>(b) * channels + cc) * hw));
        }
    }
    ensure_finite(out, "broadcast_channel");
    Tensor<S> result({n, channels, h, w}, std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    auto backward = [in_id, n, channels, h, w, hw](const Tensor<S>& up,
                                                   typename GradTape<S>::Gradients& grads) {
        std::vector<double> dg(static_cast<std::size_t>(n) * hw, 0.0);
        for (int b = 0; b < n; ++b) {
            for (int cc = 0; cc < channels; ++cc) {
                const S* g = up.data() + (static_cast<std::size_t>(b) * channels + cc) * hw;
                double* dst = dg.data() + static_cast<std::size_t>(b) * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] += static_cast<double>(g[i]);
            }
        }
        grads.accumulate(in_id, from_doubles<S>({n, 1, h, w}, dg, "broadcast_channel.grad"));
    };
    return finish(tape, "broadcast_channel", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> decimate2(GradTape<S>* tape, const Tensor<S>& x) {
    require(x.ndim() == 4, "decimate2", "input must be N x C x H x W, got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError("decimate2: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                          " must be even");
    }
    const int h2 = h / 2, w2 = w / 2;
    std::vector<S> out(static_cast<std::size_t>(n) * c * h2 * w2);
    std::size_t o = 0;
    for (int b = 0; b < n * c; ++b) {
        const S* plane = x.data() + static_cast<std::size_t>(b) * h * w;
        for (int y = 0; y < h2; ++y) {
            const S* row = plane + static_cast<std::size_t>(2 * y) * w;
            for (int xx = 0; xx < w2; ++xx) out[o++] = row[2 * xx];
        }
    }
    ensure_finite(out, "decimate2");
    Tensor<S> result({n, c, h2, w2}, std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    auto backward = [in_id, n, c, h, w, h2, w2](const Tensor<S>& up,
                                                typename GradTape<S>::Gradients& grads) {
        std::vector<S> din(static_cast<std::size_t>(n) * c * h * w, S(0));
        std::size_t o = 0;
        for (int b = 0; b < n * c; ++b) {
            S* plane = din.data() + static_cast<std::size_t>(b) * h * w;
            for (int y = 0; y < h2; ++y) {
                S* row = plane + static_cast<std::size_t>(2 * y) * w;
                for (int xx = 0; xx < w2; ++xx) row[2 * xx] = up[o++];
            }
        }
        grads.accumulate(in_id, Tensor<S>({n, c, h, w}, std::move(din)));
    };
    return finish(tape, "decimate2", {in_id}, std::move(result), std::move(backward));
}

template <typename S>
Tensor<S> reduce_sum(GradTape<S>* tape, const Tensor<S>& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
    std::vector<S> out{static_cast<S>(acc)};
    ensure_finite(out, "reduce_sum");
    Tensor<S> result({1}, std::move(out));
    if (!tape) return result;
    const int in_id = tape->node_of(x);
    if (in_id < 0) return result;
    const Shape in_shape = x.shape();
    auto backward = [in_id, in_shape](const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        grads.accumulate(in_id, Tensor<S>::full(in_shape, up[0]));
    };
    return finish(tape, "reduce_sum", {in_id}, std::move(result), std::move(backward));
}

#define MAUNET_INSTANTIATE_OPS(S)                                                                 \
    template Tensor<S> conv2d(GradTape<S>*, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, \
                              int, int);                                                          \
    template Tensor<S> conv2d_nobias(GradTape<S>*, const Tensor<S>&, const Tensor<S>&, int, int); \
    template Tensor<S> max_pool2d(GradTape<S>*, const Tensor<S>&, int, int);                      \
    template Tensor<S> bilinear_upsample(GradTape<S>*, const Tensor<S>&, int, int);               \
    template Tensor<S> softmax(GradTape<S>*, const Tensor<S>&, int);                              \
    template Tensor<S> layer_norm(GradTape<S>*, const Tensor<S>&, const std::vector<int>&,        \
                                  const Tensor<S>&, const Tensor<S>&, double);                    \
    template Tensor<S> matmul(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);                  \
    template Tensor<S> relu(GradTape<S>*, const Tensor<S>&);                                      \
    template Tensor<S> sigmoid(GradTape<S>*, const Tensor<S>&);                                   \
    template Tensor<S> add(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);                     \
    template Tensor<S> mul(GradTape<S>*, const Tensor<S>&, const Tensor<S>&);                     \
    template Tensor<S> scale(GradTape<S>*, const Tensor<S>&, double);                             \
    template Tensor<S> concat(GradTape<S>*, const std::vector<Tensor<S>>&, int);                  \
    template Tensor<S> reshape(GradTape<S>*, const Tensor<S>&, Shape);                            \
    template Tensor<S> transpose(GradTape<S>*, const Tensor<S>&, const std::vector<int>&);        \
    template Tensor<S> broadcast_spatial(GradTape<S>*, const Tensor<S>&, int, int);               \
    template Tensor<S> broadcast_channel(GradTape<S>*, const Tensor<S>&, int);                    \
    template Tensor<S> decimate2(GradTape<S>*, const Tensor<S>&);                                 \
    template Tensor<S> reduce_sum(GradTape<S>*, const Tensor<S>&);                                \
    template void ensure_finite(const std::vector<S>&, const char*);

MAUNET_INSTANTIATE_OPS(float)
MAUNET_INSTANTIATE_OPS(double)
#undef MAUNET_INSTANTIATE_OPS

}  // namespace maunet
