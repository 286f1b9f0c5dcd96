#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsd {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// One value in the computation graph. Parameters, inputs and activations all
// share this representation; grad is allocated on first touch.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string name;

    int64_t size() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void zero_grad() { grad.assign(value.size(), T(0)); }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_node(Shape shape, bool requires_grad = false, std::string name = {}) {
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("make_node: nonpositive dim in " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(numel(n->shape)), T(0));
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

template <typename T>
NodePtr<T> make_node(Shape shape, std::vector<T> values, bool requires_grad = false,
                     std::string name = {}) {
    auto n = make_node<T>(std::move(shape), requires_grad, std::move(name));
    if (static_cast<int64_t>(values.size()) != numel(n->shape)) {
        throw std::invalid_argument("make_node: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(n->shape));
    }
    n->value = std::move(values);
    return n;
}

// Reverse-mode tape. Operations append themselves in execution order, which
// is already a topological order of the graph; backward() replays the steps
// in reverse. Intermediate grads (outputs of recorded steps) are reset at the
// start of every backward pass, while leaf grads accumulate across passes so
// a trainer can sum gradients over several graphs before stepping.
template <typename T>
class Tape {
public:
    struct Step {
        const char* op;
        std::vector<const Node<T>*> inputs;
        NodePtr<T> output;
        std::function<void()> backward;
    };

    bool recording = true;

    void record(const char* op, std::vector<const Node<T>*> inputs, NodePtr<T> output,
                std::function<void()> backward) {
        if (!recording) return;
        Step s;
        s.op = op;
        s.inputs = std::move(inputs);
        s.output = std::move(output);
        s.backward = std::move(backward);
        steps_.push_back(std::move(s));
    }

    void backward(const NodePtr<T>& root) {
        if (root->size() != 1) {
            throw std::invalid_argument("backward: root must be scalar, got " +
                                        shape_str(root->shape));
        }
        for (auto& s : steps_) s.output->zero_grad();
        root->ensure_grad();
        root->grad[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->backward();
    }

    const std::vector<Step>& steps() const { return steps_; }
    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    std::vector<Step> steps_;
};

} // namespace fsd
