#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "maunet/tape.hpp"
#include "maunet/tensor.hpp"

namespace maunet {

// Named, ordered collection of learnable tensors with per-parameter Adam
// state. Name order is fixed at build time and defines checkpoint layout.
template <typename S>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        Tensor<S> m;  // first-moment slot
        Tensor<S> v;  // second-moment slot
    };

    int add(const std::string& name, Tensor<S> init) {
        if (by_name_.count(name)) throw UsageError("param store: duplicate name '" + name + "'");
        const int idx = static_cast<int>(entries_.size());
        entries_.push_back(Entry{name, init, Tensor<S>::zeros(init.shape()),
                                 Tensor<S>::zeros(init.shape())});
        by_name_.emplace(name, idx);
        return idx;
    }

    int find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? -1 : it->second;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

    const Entry& operator[](int idx) const { return entries_[static_cast<std::size_t>(idx)]; }
    Entry& operator[](int idx) { return entries_[static_cast<std::size_t>(idx)]; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    // Tensors aligned with entry order; watched on the tape when one is given
    // (each training step watches afresh, so gradients key off this step's
    // node ids).
    std::vector<Tensor<S>> bind(GradTape<S>* tape) const {
        std::vector<Tensor<S>> bound;
        bound.reserve(entries_.size());
        for (const auto& e : entries_) {
            bound.push_back(tape ? tape->watch(e.value) : e.value);
        }
        return bound;
    }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

using ParamStoreF = ParamStore<float>;
using ParamStoreD = ParamStore<double>;

}  // namespace maunet
