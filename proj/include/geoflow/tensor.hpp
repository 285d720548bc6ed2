#pragma once

// Minimal reverse-mode differentiable tensor engine.
//
// Tensor<T> is a plain dense value (shape + row-major data). Var<T> is a
// handle onto a node of the recorded computation: it owns the forward value,
// a gradient buffer and the closure that pushes gradients to its parents.
// backward() walks the recorded graph in reverse topological order.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "geoflow/errors.hpp"

namespace geoflow::tc {

using Shape = std::vector<std::int64_t>;

// 64-byte aligned storage. Vectorised kernels peel unaligned heads, so a
// fixed base alignment keeps results independent of where the allocator
// happens to place a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel_of(shape_)), fill) {}
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != numel_of(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    AlignedVector<T>& storage() { return data_; }
    const AlignedVector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        if (numel_of(shape) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        AlignedVector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    AlignedVector<T> data_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily; same shape as value once present
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::int64_t numel() const { return node_->value.numel(); }

    bool has_grad() const { return !node_->grad.empty(); }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad = Tensor<T>(); }

    bool requires_grad() const { return node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    T item() const {
        if (numel() != 1) throw UsageError("item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

// Leaf constructors.
template <typename T>
Var<T> constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var<T>(std::move(n));
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var<T>(std::move(n));
}

// While alive on the current thread, operations record no backward closures.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Builds a result node. When any parent requires a gradient (and recording is
// enabled) the closure is stored and invoked during backward().
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->is_leaf = false;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any && grad_enabled()) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Var<T>(std::move(n));
}

// Reverse pass from a scalar. Leaf gradients accumulate across calls until
// zeroed; intermediate gradients are reset at the start of every pass.
template <typename T>
void backward(const Var<T>& loss);

// Named trainable tensors in insertion order.
template <typename T>
class ParameterSet {
public:
    Var<T>& add(const std::string& name, Tensor<T> init);
    Var<T>& at(const std::string& name);
    const Var<T>& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    std::int64_t total_elements() const;
    void zero_grad();

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::deque<std::pair<std::string, Var<T>>> entries_;  // stable references
};

}  // namespace geoflow::tc
