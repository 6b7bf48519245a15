#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tsnet/common.hpp"

namespace tsnet {

/// Thread-local switch controlling whether operations record themselves on
/// the tape. Frozen/eval forward passes run with it disabled.
class GradMode {
  public:
    static bool enabled() { return enabled_; }
    static void set_enabled(bool on) { enabled_ = on; }

  private:
    static thread_local bool enabled_;
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

template <typename T>
struct TensorData {
    Shape4 shape;
    std::vector<T> values;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    int64_t node = -1;        // producing tape node, -1 for leaves
    uint64_t tape_epoch = 0;  // epoch of the tape when the node was recorded

    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), T(0));
    }
};

/// Value-semantic handle to a rank-4 array participating in reverse-mode
/// differentiation. Copies share the underlying buffer.
template <typename T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape4 s, bool requires_grad = false) {
        return Tensor(s, std::vector<T>(static_cast<size_t>(checked_count(s)), T(0)), requires_grad);
    }
    static Tensor full(Shape4 s, T v, bool requires_grad = false) {
        return Tensor(s, std::vector<T>(static_cast<size_t>(checked_count(s)), v), requires_grad);
    }
    static Tensor from_vector(Shape4 s, std::vector<T> v, bool requires_grad = false) {
        if (static_cast<int64_t>(v.size()) != s.count())
            throw ShapeError(strcat("data length ", v.size(), " does not match ", s.str()));
        return Tensor(s, std::move(v), requires_grad);
    }
    static Tensor scalar(T v) { return full({1, 1, 1, 1}, v); }

    bool defined() const { return impl_ != nullptr; }
    const Shape4& shape() const { return impl_->shape; }
    int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

    T* data() { return impl_->values.data(); }
    const T* data() const { return impl_->values.data(); }
    std::vector<T>& values() { return impl_->values; }
    const std::vector<T>& values() const { return impl_->values; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool on) {
        if (on && impl_->node >= 0)
            throw ValueError("requires_grad can only be toggled on leaf tensors");
        impl_->requires_grad = on;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw ValueError("tensor has no gradient");
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    int64_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
        const Shape4& s = impl_->shape;
        return ((n * s.c + c) * s.h + h) * s.w + w;
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data()[offset(n, c, h, w)]; }

    /// Value of a single-element tensor.
    T item() const {
        if (size() != 1) throw ShapeError(strcat("item() on tensor of shape ", shape().str()));
        return impl_->values[0];
    }

    std::shared_ptr<TensorData<T>> impl() const { return impl_; }

  private:
    Tensor(Shape4 s, std::vector<T> v, bool requires_grad) : impl_(std::make_shared<TensorData<T>>()) {
        impl_->shape = s;
        impl_->values = std::move(v);
        impl_->requires_grad = requires_grad;
    }

    static int64_t checked_count(Shape4 s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError(strcat("negative extent in ", s.str()));
        return s.count();
    }

    std::shared_ptr<TensorData<T>> impl_;
};

/// Ordered record of operations for one forward pass. Nodes appear in
/// topological order (each after all of its parents); backward() sweeps the
/// record in reverse from the loss node and then clears the tape unless
/// retention is requested.
template <typename T>
class Tape {
  public:
    static Tape& active() {
        static thread_local Tape tape;
        return tape;
    }

    /// Appends a node. `backward` must read the output gradient and
    /// accumulate into every grad-requiring input.
    void record(std::vector<Tensor<T>> inputs, Tensor<T>& output, std::function<void()> backward) {
        output.impl()->node = static_cast<int64_t>(nodes_.size());
        output.impl()->tape_epoch = epoch_;
        nodes_.push_back(Node{std::move(inputs), output.impl(), std::move(backward)});
    }

    void backward(const Tensor<T>& loss, bool retain = false) {
        if (!loss.defined()) throw ValueError("backward on undefined tensor");
        if (loss.size() != 1)
            throw ShapeError(strcat("backward requires a scalar loss, got ", loss.shape().str()));
        auto impl = loss.impl();
        if (impl->node < 0) {
            // Loss is a leaf; its gradient w.r.t. itself is 1.
            if (impl->requires_grad) {
                impl->ensure_grad();
                impl->grad[0] += T(1);
            }
            return;
        }
        if (impl->tape_epoch != epoch_ || impl->node >= static_cast<int64_t>(nodes_.size()))
            throw ValueError("backward: tape already cleared (second backward without retain?)");

        const int64_t root = impl->node;
        std::vector<char> live(static_cast<size_t>(root) + 1, 0);
        live[static_cast<size_t>(root)] = 1;

        impl->ensure_grad();
        impl->grad[0] += T(1);

        for (int64_t i = root; i >= 0; --i) {
            if (!live[static_cast<size_t>(i)]) continue;
            Node& node = nodes_[static_cast<size_t>(i)];
            for (const Tensor<T>& in : node.inputs) {
                const int64_t p = in.impl()->node;
                if (p >= 0 && in.impl()->tape_epoch == epoch_) live[static_cast<size_t>(p)] = 1;
            }
            if (!node.output->grad.empty()) node.backward();
        }
        if (!retain) clear();
    }

    void clear() {
        nodes_.clear();
        ++epoch_;
    }

    size_t size() const { return nodes_.size(); }
    uint64_t epoch() const { return epoch_; }

  private:
    struct Node {
        std::vector<Tensor<T>> inputs;
        std::shared_ptr<TensorData<T>> output;  // keeps saved activations alive
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;
    uint64_t epoch_ = 1;
};

/// Records `out = op(inputs)` when grad mode is on and any input requires
/// grad; otherwise leaves the output as a plain value.
template <typename T>
void record_op(std::vector<Tensor<T>> inputs, Tensor<T>& out, std::function<void()> backward) {
    if (!GradMode::enabled()) return;
    bool wants = false;
    for (const Tensor<T>& in : inputs) wants = wants || in.requires_grad();
    if (!wants) return;
    out.impl()->requires_grad = true;
    Tape<T>::active().record(std::move(inputs), out, std::move(backward));
}

/// Reverse sweep from a scalar loss; leaves with requires_grad receive
/// dLoss/dLeaf. Gradients accumulate additively across fan-out.
template <typename T>
void backward(const Tensor<T>& loss, bool retain = false) {
    Tape<T>::active().backward(loss, retain);
}

}  // namespace tsnet
