#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "priormoe/tensor.hpp"

namespace priormoe::ad {

// One differentiable value in the graph. Gradients are lazily allocated and
// accumulate additively across all consumers of the node.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;

    Tensor& ensure_grad() {
        if (!grad_alloc) {
            grad = Tensor::zeros(value.shape());
            grad_alloc = true;
        }
        return grad;
    }
    void drop_grad() {
        grad = Tensor();
        grad_alloc = false;
    }
};

// Cheap shared handle to a Node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad_alloc; }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Ordered record of executed operations. backward() replays the record in
// exact reverse execution order, then clears the record; node gradients are
// left in place for the optimizer to consume.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step) {
        steps_.push_back(std::move(backward_step));
    }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    // Seeds d(root)/d(root) = 1 (root must be scalar, shape {1}) and runs all
    // recorded steps newest-first.
    void backward(const Var& root);

    static Tape* active();

private:
    std::vector<std::function<void()>> steps_;
    friend class TapeScope;
};

// RAII activation of a tape for the current thread. Ops record onto the
// active tape when one exists and any input requires a gradient; with no
// active tape every op is a pure forward evaluation.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

}  // namespace priormoe::ad
