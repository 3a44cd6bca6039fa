#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "maunet/tensor.hpp"

namespace maunet {

// Reverse-mode gradient tape: a Wengert list of operation records in
// topological order. Ops append nodes during the forward pass; each node
// carries a closure that routes the node's upstream gradient to its inputs.
// A tape is confined to one logical thread for one training step.
template <typename Scalar>
class GradTape {
  public:
    // Per-node gradient slots produced by backward(). A tensor consumed k
    // times accumulates the sum of its k path contributions.
    class Gradients {
      public:
        explicit Gradients(std::size_t n) : slots_(n) {}

        void accumulate(int node, const Tensor<Scalar>& g) {
            auto& slot = slots_[static_cast<std::size_t>(node)];
            if (!slot.has_value()) {
                slot = g;
                return;
            }
            if (!same_shape(slot->shape(), g.shape())) {
                throw ShapeError("gradient accumulation shape mismatch: " +
                                 shape_str(slot->shape()) + " vs " + shape_str(g.shape()));
            }
            std::vector<Scalar> sum(slot->size());
            const Scalar* a = slot->data();
            const Scalar* b = g.data();
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = a[i] + b[i];
            slot = Tensor<Scalar>(slot->shape(), std::move(sum));
        }

        const Tensor<Scalar>* find(int node) const {
            if (node < 0 || static_cast<std::size_t>(node) >= slots_.size()) return nullptr;
            const auto& slot = slots_[static_cast<std::size_t>(node)];
            return slot.has_value() ? &*slot : nullptr;
        }

        // dLoss/dT for a watched tensor; parameters not reached by the loss
        // get zero gradients.
        Tensor<Scalar> get_or_zero(int node, const Shape& shape) const {
            const Tensor<Scalar>* g = find(node);
            return g ? *g : Tensor<Scalar>::zeros(shape);
        }

      private:
        std::vector<std::optional<Tensor<Scalar>>> slots_;
    };

    using BackwardFn = std::function<void(const Tensor<Scalar>& upstream, Gradients& grads)>;

    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // Register a leaf (e.g. a learnable parameter); returns a copy linked to
    // this tape so that downstream ops record it as a gradient target.
    Tensor<Scalar> watch(const Tensor<Scalar>& t) {
        nodes_.push_back(Node{"leaf", {}, t.shape(), nullptr});
        return t.with_node(this, static_cast<int>(nodes_.size()) - 1);
    }

    // Append an operation record. Inputs must already be on the tape
    // (ids precede the new node), which keeps the list topologically sorted
    // and acyclic by construction.
    int record(std::string op, std::vector<int> inputs, Shape out_shape, BackwardFn fn) {
        const int id = static_cast<int>(nodes_.size());
        for (int in : inputs) {
            if (in < 0 || in >= id) {
                throw UsageError("tape record '" + op + "': input id " + std::to_string(in) +
                                 " does not precede node " + std::to_string(id));
            }
        }
        nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(out_shape), std::move(fn)});
        return id;
    }

    // Node id of `t` on this tape, or -1 when it is a constant here.
    int node_of(const Tensor<Scalar>& t) const {
        return t.tape_tag() == static_cast<const void*>(this) ? t.node() : -1;
    }

    std::size_t num_nodes() const { return nodes_.size(); }

    // Seed the scalar loss node with 1 and sweep the list once in reverse
    // topological order, accumulating gradients into every reached node.
    Gradients backward(int seed_node) const {
        if (seed_node < 0 || static_cast<std::size_t>(seed_node) >= nodes_.size()) {
            throw UsageError("backward: seed node " + std::to_string(seed_node) +
                             " is not on the tape");
        }
        if (numel(nodes_[static_cast<std::size_t>(seed_node)].out_shape) != 1) {
            throw UsageError("backward: seed node must be scalar, got shape " +
                             shape_str(nodes_[static_cast<std::size_t>(seed_node)].out_shape));
        }
        Gradients grads(nodes_.size());
        grads.accumulate(seed_node, Tensor<Scalar>::full(
                                        nodes_[static_cast<std::size_t>(seed_node)].out_shape,
                                        Scalar(1)));
        for (int id = seed_node; id >= 0; --id) {
            const Node& node = nodes_[static_cast<std::size_t>(id)];
            if (!node.backward) continue;  // leaf or non-differentiable record
            const Tensor<Scalar>* upstream = grads.find(id);
            if (!upstream) continue;  // not reached from the seed
            node.backward(*upstream, grads);
        }
        return grads;
    }

    Tensor<Scalar> backward_for(int seed_node, const Tensor<Scalar>& watched) const {
        Gradients g = backward(seed_node);
        return g.get_or_zero(node_of(watched), watched.shape());
    }

  private:
    struct Node {
        std::string op;
        std::vector<int> inputs;
        Shape out_shape;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

using GradTapeF = GradTape<float>;
using GradTapeD = GradTape<double>;

}  // namespace maunet
