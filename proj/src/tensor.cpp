#include "maunet/tensor.hpp"

#include <sstream>

namespace maunet {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename Scalar>
Tensor<Scalar> narrow(const Tensor<Scalar>& t, int axis, int start, int len) {
    if (axis < 0 || axis >= t.ndim()) throw ShapeError("narrow: axis out of range");
    if (start < 0 || len <= 0 || start + len > t.dim(axis)) {
        throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds axis " + std::to_string(axis) +
                         " of " + shape_str(t.shape()));
    }
    Shape out_shape = t.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;

    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= static_cast<std::size_t>(t.dim(a));
    for (int a = axis + 1; a < t.ndim(); ++a) inner *= static_cast<std::size_t>(t.dim(a));
    const std::size_t src_axis = static_cast<std::size_t>(t.dim(axis));

    std::vector<Scalar> out(numel(out_shape));
    const Scalar* src = t.data();
    std::size_t w = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = (o * src_axis + static_cast<std::size_t>(start)) * inner;
        for (std::size_t k = 0; k < static_cast<std::size_t>(len) * inner; ++k) {
            out[w++] = src[base + k];
        }
    }
    return Tensor<Scalar>(std::move(out_shape), std::move(out));
}

template Tensor<float> narrow(const Tensor<float>&, int, int, int);
template Tensor<double> narrow(const Tensor<double>&, int, int, int);

}  // namespace maunet
