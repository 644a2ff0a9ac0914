#include "faultdiff/autograd.hpp"

#include <unordered_set>

namespace faultdiff {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled();
    return Var(std::move(n));
}

template <typename T>
Var<T> Var<T>::param(Parameter<T>& p) {
    auto n = std::make_shared<Node<T>>();
    n->value = p.value;
    n->param = &p;
    n->requires_grad = p.trainable && grad_enabled();
    return Var(std::move(n));
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        if (any) {
            n->requires_grad = true;
            for (const auto& p : parents)
                if (p.requires_grad()) n->parents.push_back(p.node());
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Var<T>(std::move(n));
}

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.valid() || loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.valid() ? shape_str(loss.shape()) : std::string("<none>")));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; reversed it is a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] = T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && node->grad.numel() == node->value.numel()) node->backward_fn(*node);
    }
    for (Node<T>* node : order) {
        if (node->param && node->param->trainable && node->grad.numel() == node->value.numel()) {
            auto dst = node->param->grad.data();
            auto src = node->grad.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>, std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>, std::function<void(Node<double>&)>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

} // namespace faultdiff
