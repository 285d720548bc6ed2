#include "geoflow/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace geoflow::tc {

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
void backward(const Var<T>& loss) {
    if (!loss.defined()) throw UsageError("backward on undefined tensor");
    if (loss.numel() != 1)
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* n : order)
        if (!n->is_leaf) n->grad = Tensor<T>();

    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

template <typename T>
Var<T>& ParameterSet<T>::add(const std::string& name, Tensor<T> init) {
    if (contains(name)) throw ConfigError("duplicate parameter name " + name);
    entries_.emplace_back(name, parameter(std::move(init)));
    return entries_.back().second;
}

template <typename T>
Var<T>& ParameterSet<T>::at(const std::string& name) {
    for (auto& [n, v] : entries_)
        if (n == name) return v;
    throw UsageError("unknown parameter " + name);
}

template <typename T>
const Var<T>& ParameterSet<T>::at(const std::string& name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw UsageError("unknown parameter " + name);
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

template <typename T>
std::int64_t ParameterSet<T>::total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace geoflow::tc
