#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "t3dnet/core/error.hpp"

namespace t3d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
struct TensorImpl;

/// One recorded op on the tape: the inputs it read and how to push the output
/// gradient back into them.
template <typename T>
struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::function<void(TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    /// Returns the gradient buffer, allocating zeros on first use.
    std::vector<T>& grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// Dense row-major tensor with an optional autodiff graph node.
///
/// Copies share the underlying storage. Values produced by ops are treated as
/// immutable; only leaf parameters are updated in place by optimizers.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + detail::shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw DimensionError("shape " + detail::shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }
    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }
    static Tensor scalar(T value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }

    bool defined() const noexcept { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    /// In-place access for leaf parameters (optimizer updates, checkpoint loads).
    std::span<T> mutable_data() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + detail::shape_str(shape()));
        return impl_->data[0];
    }
    T operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) {
        if (impl_->node) throw ContractError("requires_grad can only be changed on leaf tensors");
        impl_->requires_grad = v;
    }
    bool is_leaf() const { return !impl_->node; }

    bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
    /// Gradient buffer; empty span when no gradient has been accumulated.
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    void zero_grad() { impl_->grad.clear(); }

    /// Same values, no graph history.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data, false); }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

   private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

namespace detail {

template <typename T>
void require_finite(std::span<const T> v, const char* op) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericError(std::string(op) + ": non-finite value at element " + std::to_string(i));
}

/// Builds an op result. When any input requires grad, records a node whose
/// backward closure pushes `out.grad` into the inputs. Ops that only move or
/// select finite values may skip the finiteness scan.
template <typename T, typename Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<TensorImpl<T>>> inputs, Backward&& backward,
                      bool check_finite = true) {
    if (check_finite) require_finite<T>(data, op);
    Tensor<T> out(std::move(shape), std::move(data), false);
    bool needs = false;
    if (grad_enabled())
        for (auto& in : inputs) needs = needs || in->requires_grad;
    if (needs) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::forward<Backward>(backward);
        out.impl()->requires_grad = true;
        out.impl()->node = std::move(node);
    }
    return out;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss.
///
/// Gradients accumulate (sum) into every reachable leaf with requires_grad.
/// The tape is consumed: intermediate nodes and gradients are released, so a
/// second backward on the same loss raises ContractError.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? detail::shape_str(loss.shape()) : std::string("<undefined>")));
    auto root = loss.impl();
    if (!root->requires_grad) throw ContractError("backward on a tensor that does not require grad");
    if (!root->node) {
        // leaf scalar parameter
        root->grad_buffer()[0] += T(1);
        return;
    }

    // Iterative post-order DFS gives a topological order.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->node && next < cur->node->inputs.size()) {
            auto* child = cur->node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(cur);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* cur = *it;
        if (!cur->node) continue;
        if (cur->grad.size() == cur->data.size()) cur->node->backward(*cur);
    }
    // Nodes keep their inputs alive; hold them until every impl is cleaned up.
    std::vector<std::shared_ptr<Node<T>>> released;
    released.reserve(order.size());
    for (auto* cur : order) {
        if (cur->node) {
            released.push_back(std::move(cur->node));
            cur->grad.clear();
            cur->grad.shrink_to_fit();
            cur->requires_grad = false;
        }
    }
}

/// A trainable leaf with a stable name.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

}  // namespace t3d
