#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>

#include "lclip/common.hpp"
#include "lclip/rng.hpp"

namespace lclip {

// Reverse-mode autodiff over dense n-d tensors. The graph is dynamic: each
// op allocates a node holding the output buffer, its parents and a backward
// closure. backward() runs the closures in reverse topological order and
// then frees the graph, so a fresh forward pass is required before the next
// backward (no higher-order gradients).
//
// Scalar is float in training/inference and double in the verification
// builds used by the finite-difference suites.

namespace detail {
inline thread_local int no_grad_depth = 0;
inline bool grad_enabled() { return no_grad_depth == 0; }

// vector whose resize() default-initializes; op outputs are fully
// overwritten, so zero-filling them would only add a memory pass
template <class T, class A = std::allocator<T>>
struct default_init_allocator : public A {
    template <class U>
    struct rebind {
        using other =
            default_init_allocator<U, typename std::allocator_traits<A>::template rebind_alloc<U>>;
    };
    using A::A;
    template <class U>
    void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(ptr)) U;
    }
    template <class U, class... Args>
    void construct(U* ptr, Args&&... args) {
        std::allocator_traits<A>::construct(static_cast<A&>(*this), ptr,
                                            std::forward<Args>(args)...);
    }
};

// finite check without isfinite branching: the value is finite iff the
// exponent field is not all ones
inline bool finite_bits(float v) {
    uint32_t b;
    std::memcpy(&b, &v, 4);
    return (b & 0x7f800000u) != 0x7f800000u;
}
inline bool finite_bits(double v) {
    uint64_t b;
    std::memcpy(&b, &v, 8);
    return (b & 0x7ff0000000000000ull) != 0x7ff0000000000000ull;
}

} // namespace detail

template <class S>
using RawVec = std::vector<S, detail::default_init_allocator<S>>;

// RAII guard that disables graph recording, used by evaluation loops.
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct TensorNode {
    Shape shape;
    RawVec<S> value;
    RawVec<S> grad; // sized on first accumulation
    bool requires_grad = false;
    bool backward_done = false;
    std::function<void()> backward_fn; // empty for leaves
    std::vector<std::shared_ptr<TensorNode>> parents;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <class S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }

    static Tensor filled(Shape shape, S fill) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<size_t>(numel_of(t.node_->shape)), fill);
        return t;
    }

    static Tensor from(Shape shape, const std::vector<S>& values) {
        check(numel_of(shape) == static_cast<int64_t>(values.size()),
              "tensor init: shape ", shape_str(shape), " expects ", numel_of(shape),
              " values, got ", values.size());
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(values.begin(), values.end());
        return t;
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t = zeros(std::move(shape));
        for (S& x : t.node_->value) x = static_cast<S>(rng.normal() * stddev);
        return t;
    }

    static Tensor trunc_normal(Shape shape, Rng& rng, double stddev) {
        Tensor t = zeros(std::move(shape));
        for (S& x : t.node_->value) x = static_cast<S>(rng.trunc_normal(stddev));
        return t;
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    std::span<const S> values() const { return node_->value; }

    // Direct mutation is only legal on leaves that are not yet part of a
    // recorded graph (data loading, optimizer updates).
    std::span<S> values_mut() { return node_->value; }

    S item() const {
        check(numel() == 1, "item() requires a scalar tensor, shape is ",
              shape_str(shape()));
        return node_->value[0];
    }

    S at(std::initializer_list<int64_t> idx) const {
        check(static_cast<int>(idx.size()) == ndim(), "at(): rank mismatch");
        int64_t flat = 0;
        int i = 0;
        for (int64_t v : idx) {
            flat = flat * node_->shape[static_cast<size_t>(i)] + v;
            ++i;
        }
        return node_->value[static_cast<size_t>(flat)];
    }

    Tensor& set_requires_grad(bool rg = true) {
        node_->requires_grad = rg;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const S> grad() const {
        check(has_grad(), "gradient not populated; call backward() first");
        return node_->grad;
    }
    std::span<S> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
        node_->backward_done = false;
    }

    bool all_finite() const {
        // branch-light integer test, auto-vectorizable
        int ok = 1;
        for (S x : node_->value) ok &= static_cast<int>(detail::finite_bits(x));
        return ok != 0;
    }

    // Detached copy of the values as a fresh leaf.
    Tensor detach_copy() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        return t;
    }

    template <class T>
    Tensor<T> cast() const {
        std::vector<T> v(node_->value.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(node_->value[i]);
        return Tensor<T>::from(node_->shape, std::move(v));
    }

    std::shared_ptr<TensorNode<S>>& node() { return node_; }
    const std::shared_ptr<TensorNode<S>>& node() const { return node_; }

    // Allocates the output node of an op (uninitialized: every kernel fully
    // overwrites its output) and wires the graph when recording is active
    // and any parent participates in it.
    static Tensor make_op(Shape shape, const std::vector<Tensor>& parents) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<S>>();
        t.node_->shape = std::move(shape);
        t.node_->value.resize(static_cast<size_t>(numel_of(t.node_->shape)));
        if (!detail::grad_enabled()) return t;
        bool rg = false;
        for (const Tensor& p : parents) rg = rg || p.node_->requires_grad;
        if (!rg) return t;
        t.node_->requires_grad = true;
        t.node_->parents.reserve(parents.size());
        for (const Tensor& p : parents) t.node_->parents.push_back(p.node_);
        return t;
    }

    bool recorded() const { return node_->requires_grad && detail::grad_enabled(); }

    void set_backward(std::function<void()> fn) {
        if (!node_->parents.empty()) node_->backward_fn = std::move(fn);
    }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

// Populates grad on every requires_grad leaf reachable from `loss`, then
// releases the recorded graph. `loss` must be scalar.
template <class S>
void backward(const Tensor<S>& loss) {
    check(loss.numel() == 1, "backward() expects a scalar loss, shape is ",
          shape_str(loss.shape()));
    auto root = loss.node();
    check(root->requires_grad,
          "backward(): loss does not depend on any requires_grad tensor");
    check(!root->backward_done,
          "backward() called twice on the same graph; run a fresh forward pass");

    // Iterative DFS topological sort over the recorded graph.
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> visited;
    struct Frame {
        TensorNode<S>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode<S>* p = f.node->parents[f.next_parent++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn();
        n->backward_done = true;
    }
    // Free the tape: closures and parent edges go away, values and leaf
    // grads stay with whoever still holds the tensors.
    for (TensorNode<S>* n : order) {
        n->backward_fn = nullptr;
        n->parents.clear();
        n->parents.shrink_to_fit();
    }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace lclip
