#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dpt/common.hpp"
#include "dpt/rng.hpp"

namespace dpt {

// Element precision of a computation graph. Realized as the Tensor<T>
// template parameter; a graph never mixes the two.
enum class Precision { single_prec, double_prec };

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized on first backward touching this node
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node<T>>> parents;
    // Pulls this->grad into the parents' grad buffers. Captures raw parent
    // pointers; ownership stays with `parents`.
    std::function<void(Node<T>&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->value.assign(static_cast<size_t>(dpt::numel(shape)), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check(dpt::numel(shape) == static_cast<int64_t>(data.size()),
              "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                  shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> data(static_cast<size_t>(dpt::numel(shape)));
        for (auto& v : data) v = static_cast<T>(rng.normal()) * stddev;
        return from_data(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::vector<T> data(static_cast<size_t>(dpt::numel(shape)));
        for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
        return from_data(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    const std::vector<T>& data() const { return n_->value; }

    // Leaf tensors only: parameters mutated by the optimizer, rng fills,
    // running statistics. Mutating an op output would desynchronize the graph.
    std::vector<T>& raw() {
        check(n_->is_leaf, "raw() is restricted to leaf tensors");
        return n_->value;
    }

    T item() const {
        check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }

    void set_requires_grad(bool b) {
        check(n_->is_leaf, "requires_grad can only be toggled on leaf tensors");
        n_->requires_grad = b;
    }

    bool has_grad() const { return n_ && n_->grad.size() == n_->value.size(); }

    const std::vector<T>& grad() const {
        check(has_grad(), "tensor has no gradient buffer; run backward first");
        return n_->grad;
    }

    void zero_grad() {
        if (n_) n_->grad.assign(n_->value.size(), T(0));
    }

    // Detached copy of the current values (fresh leaf).
    Tensor detach() const { return from_data(n_->shape, n_->value, false); }

    std::shared_ptr<Node<T>> node() const { return n_; }

    explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<Node<T>> n_;
};

template <typename T>
void throw_if_nonfinite(const std::vector<T>& v, const char* op) {
    for (const T x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op) + " produced a non-finite value");
        }
    }
}

// Builds an op output node. Gradient bookkeeping is dropped entirely when no
// input wants gradients, so inference graphs stay flat.
template <typename T>
Tensor<T> make_op(const char* name, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backprop) {
    check(dpt::numel(shape) == static_cast<int64_t>(value.size()),
          std::string(name) + ": output buffer does not match shape " + shape_str(shape));
    throw_if_nonfinite(value, name);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

// Reverse-mode sweep from a scalar root. Gradients accumulate into every
// reachable requires_grad tensor; leaf buffers persist across calls until
// zero_grad.
template <typename T>
void backward(const Tensor<T>& root) {
    check(root.defined(), "backward: tensor is empty");
    check(root.numel() == 1, "backward requires a scalar root, got " + shape_str(root.shape()));
    check(root.requires_grad(), "backward: root does not require gradients");

    // Iterative post-order DFS; training graphs are deep enough that
    // recursion is not safe.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* parent = node->parents[idx++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order) n->ensure_grad();
    root.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dpt
