#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "faultdiff/tensor.hpp"

namespace faultdiff {

/// Named trainable array. Frozen parameters never receive gradient.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
};

/// Ordered collection of parameters; iteration order is insertion order and
/// defines checkpoint layout.
template <typename T>
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
        auto p = std::make_unique<Parameter<T>>();
        p->name = name;
        p->grad = Tensor<T>(value.shape());
        p->value = std::move(value);
        p->trainable = trainable;
        index_[name] = items_.size();
        items_.push_back(std::move(p));
        return *items_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    Parameter<T>& get(const std::string& name) {
        if (auto* p = find(name)) return *p;
        throw ContractError("unknown parameter '" + name + "'");
    }

    std::size_t size() const noexcept { return items_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void set_trainable(bool trainable) {
        for (auto& p : items_) p->trainable = trainable;
    }

    void zero_grad() {
        for (auto& p : items_) p->grad.fill(T{0});
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;

    Tensor<T>& grad_buffer() {
        if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a node of the recorded computation graph.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    /// Leaf whose gradient is kept on the node (used for input gradients).
    static Var leaf(Tensor<T> value, bool requires_grad = true);

    static Var param(Parameter<T>& p);

    const Tensor<T>& value() const { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    std::size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Whether ops record the backward graph on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Creates an op result. The backward closure is kept only when recording is
/// enabled and some parent requires gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn);

/// Accumulates d(loss)/d(x) into every reachable trainable Parameter::grad
/// and every gradient-requiring leaf. Throws ContractError if loss is not a
/// scalar.
template <typename T>
void backward(const Var<T>& loss);

} // namespace faultdiff
