#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "maunet/error.hpp"
#include "maunet/rng.hpp"

namespace maunet {

// Dimension list, canonical feature-map layout N x C x H x W.
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor. Values are immutable once constructed; copies share
// the underlying buffer. A tensor may carry a link (tape tag + node id) to the
// gradient tape that produced it, used by ops to wire the backward graph.
template <typename Scalar>
class Tensor {
  public:
    Tensor() : shape_{0}, data_(std::make_shared<const std::vector<Scalar>>()) {}

    Tensor(Shape shape, std::vector<Scalar> values)
        : shape_(std::move(shape)),
          data_(std::make_shared<const std::vector<Scalar>>(std::move(values))) {
        if (numel(shape_) != data_->size()) {
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) {
        std::vector<Scalar> v(numel(shape), Scalar(0));
        return Tensor(std::move(shape), std::move(v));
    }

    static Tensor full(Shape shape, Scalar value) {
        std::vector<Scalar> v(numel(shape), value);
        return Tensor(std::move(shape), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_->size(); }

    const Scalar* data() const { return data_->data(); }
    const std::vector<Scalar>& values() const { return *data_; }

    Scalar operator[](std::size_t flat) const { return (*data_)[flat]; }

    // Slow convenience accessor for tests and diagnostics.
    Scalar at(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != ndim()) {
            throw ShapeError("at(): expected " + std::to_string(ndim()) + " indices");
        }
        std::size_t flat = 0;
        int axis = 0;
        for (int i : idx) {
            flat = flat * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
            ++axis;
        }
        return (*data_)[flat];
    }

    // Same buffer under a different shape; numel must match.
    Tensor reshaped(Shape shape) const {
        if (numel(shape) != size()) {
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             ": element count changes");
        }
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

    // Gradient-tape linkage. node() is -1 for constants; tape_tag()
    // disambiguates ids across tapes so stale links are ignored.
    int node() const { return node_; }
    const void* tape_tag() const { return tape_; }
    Tensor with_node(const void* tape, int node) const {
        Tensor out = *this;
        out.tape_ = tape;
        out.node_ = node;
        return out;
    }
    Tensor detached() const { return with_node(nullptr, -1); }

  private:
    Shape shape_;
    std::shared_ptr<const std::vector<Scalar>> data_;
    const void* tape_ = nullptr;
    int node_ = -1;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
Tensor<Scalar> random_uniform(Shape shape, RngState& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<Scalar> v(numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(rng.next_uniform(lo, hi));
    return Tensor<Scalar>(std::move(shape), std::move(v));
}

template <typename Scalar>
Tensor<Scalar> random_normal(Shape shape, RngState& rng, double mean = 0.0, double stddev = 1.0) {
    std::vector<Scalar> v(numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(mean + stddev * rng.next_normal());
    return Tensor<Scalar>(std::move(shape), std::move(v));
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
    std::vector<To> v(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<To>(t[i]);
    return Tensor<To>(t.shape(), std::move(v));
}

// Contiguous sub-range along one axis (non-differentiable utility).
template <typename Scalar>
Tensor<Scalar> narrow(const Tensor<Scalar>& t, int axis, int start, int len);

extern template Tensor<float> narrow(const Tensor<float>&, int, int, int);
extern template Tensor<double> narrow(const Tensor<double>&, int, int, int);

}  // namespace maunet
