#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "ssb/tensor.hpp"

namespace ssb {

// Reverse-mode tape node. Ops allocate a node per output, record parents and
// a backprop closure; backward() walks reachable nodes in reverse creation
// order and then releases the graph structure.
template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    Tensor<T>& ensure_grad() {
        if (grad.numel() == 0) grad = Tensor<T>(value.shape);
        return grad;
    }
    void zero_grad() {
        if (grad.numel()) grad.fill(T(0));
    }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = next_node_id();
    return n;
}

template <class T>
Var<T> constant(Tensor<T> value) {
    return make_leaf(std::move(value), false);
}

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = next_node_id();
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// Populates d(loss)/d(leaf) for every requires_grad leaf, then releases the
// recorded graph so intermediates can be freed.
template <class T>
void backward(const Var<T>& loss) {
    if (loss->value.numel() != 1)
        throw shape_error("backward requires a scalar loss, got " + shape_str(loss->value.shape));
    // shared ownership while walking: releasing one node's parents must not
    // free a node that is still on the schedule
    std::vector<Var<T>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Var<T>> stack{loss};
    while (!stack.empty()) {
        Var<T> n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || !seen.insert(n.get()).second) continue;
        for (auto& p : n->parents) stack.push_back(p);
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(),
              [](const Var<T>& a, const Var<T>& b) { return a->id > b->id; });
    loss->ensure_grad().data[0] = T(1);
    for (const Var<T>& n : order) {
        if (n->backprop) {
            if (n->grad.numel() == 0) n->ensure_grad();
            n->backprop(*n);
        }
    }
    for (const Var<T>& n : order) {
        n->parents.clear();
        n->backprop = nullptr;
    }
}

// --- SGD with momentum -----------------------------------------------------

template <class T>
struct OptimizerState {
    T learning_rate = T(0.1);
    T momentum = T(0.9);
    T weight_decay = T(0);
    std::vector<Tensor<T>> velocity;  // aligned with the parameter list

    void bind(const std::vector<Var<T>>& params) {
        velocity.clear();
        velocity.reserve(params.size());
        for (const auto& p : params) velocity.emplace_back(p->value.shape);
    }
};

// v <- mu*v + g + wd*p;  p <- p - lr*v;  grads zeroed afterwards.
template <class T>
void sgd_step(const std::vector<Var<T>>& params, OptimizerState<T>& state) {
    if (state.velocity.size() != params.size()) state.bind(params);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Node<T>& p = *params[k];
        if (p.grad.numel() == 0)
            throw error("sgd_step: parameter " + std::to_string(k) + " has no gradient");
        Tensor<T>& v = state.velocity[k];
        for (std::size_t i = 0; i < v.numel(); ++i) {
            T g = p.grad.data[i] + state.weight_decay * p.value.data[i];
            v.data[i] = state.momentum * v.data[i] + g;
            p.value.data[i] -= state.learning_rate * v.data[i];
        }
        p.zero_grad();
    }
}

}  // namespace ssb
