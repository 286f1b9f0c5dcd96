#pragma once

#include <cmath>
#include <map>

#include "fsd/rng.hpp"
#include "fsd/tensor.hpp"

namespace fsd {

// Named registry of all learnable tensors. Names are hierarchical
// ("encoder.branch0.w"); iteration is sorted by name so every consumer
// (optimizer, checkpoint writer, gradient sweep) sees one deterministic order.
template <typename T>
class ParamStore {
public:
    NodePtr<T> create_uniform(const std::string& name, Shape shape, Rng& rng, int64_t fan_in) {
        auto n = make_node<T>(std::move(shape), true, name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : n->value) v = static_cast<T>(rng.uniform(-bound, bound));
        insert(name, n);
        return n;
    }

    NodePtr<T> create_const(const std::string& name, Shape shape, T fill) {
        auto n = make_node<T>(std::move(shape), true, name);
        std::fill(n->value.begin(), n->value.end(), fill);
        insert(name, n);
        return n;
    }

    NodePtr<T> get(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) {
            throw std::invalid_argument("ParamStore: no tensor named '" + name + "'");
        }
        return it->second;
    }

    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

    std::vector<NodePtr<T>> all() const {
        std::vector<NodePtr<T>> out;
        out.reserve(by_name_.size());
        for (const auto& [k, v] : by_name_) out.push_back(v);
        return out;
    }

    const std::map<std::string, NodePtr<T>>& entries() const { return by_name_; }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& [k, v] : by_name_) n += v->size();
        return n;
    }

    int64_t count_prefix(const std::string& prefix) const {
        int64_t n = 0;
        for (const auto& [k, v] : by_name_) {
            if (k.rfind(prefix, 0) == 0) n += v->size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& [k, v] : by_name_) v->zero_grad();
    }

private:
    void insert(const std::string& name, NodePtr<T> n) {
        if (!by_name_.emplace(name, std::move(n)).second) {
            throw std::invalid_argument("ParamStore: duplicate tensor name '" + name + "'");
        }
    }

    std::map<std::string, NodePtr<T>> by_name_;
};

} // namespace fsd
