#pragma once

// Dense row-major double tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle; its values never change after an op produces
// them. Leaves (parameters) are the exception: the optimizer writes through
// mutable_data() between steps, when no tape references them.
//
// Differentiation is opt-in per thread: ops record onto the Tape installed by
// a TapeScope, and only when at least one input requires a gradient. Without
// an active tape every op is a plain evaluation.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fragmix/memory.hpp"

namespace fragmix {

using Shape = std::vector<std::size_t>;
using memory::Buffer;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape) noexcept;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TensorNode {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, Buffer data, bool requires_grad = false);
    Tensor(Shape shape, std::initializer_list<double> values);
    Tensor(Shape shape, std::span<const double> values);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor eye(std::size_t n);

    const Shape& shape() const noexcept { return node_->shape; }
    std::size_t rank() const noexcept { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return node_->data.size(); }
    // Row/column extents of a rank-2 tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const noexcept { return {node_->data.data(), node_->data.size()}; }
    std::span<double> mutable_data() noexcept { return {node_->data.data(), node_->data.size()}; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t i, std::size_t j) const;
    double item() const;

    bool requires_grad() const noexcept { return node_->requires_grad; }
    Tensor& set_requires_grad(bool value) noexcept {
        node_->requires_grad = value;
        return *this;
    }
    bool has_grad() const noexcept { return !node_->grad.empty(); }
    std::span<const double> grad() const noexcept { return {node_->grad.data(), node_->grad.size()}; }
    void zero_grad() noexcept { node_->grad.clear(); node_->grad.shrink_to_fit(); }

    // New leaf holding a copy of the values, detached from any tape.
    Tensor detach() const;
    Tensor reshaped(Shape shape) const;  // non-differentiable view copy; see ops::reshape

    bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }
    const std::shared_ptr<TensorNode>& node() const noexcept { return node_; }

private:
    std::shared_ptr<TensorNode> node_;
};

// Ordered record of differentiable primitive evaluations.
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const double> out_grad)>;

    void record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward);

    // Seeds d(loss)/d(loss) = 1 for a single-element loss and propagates to
    // every recorded input, visiting entries in reverse recording order.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return entries_.size(); }
    void clear() noexcept { entries_.clear(); }

    // Indices of entries in the order the last backward() visited them.
    const std::vector<std::size_t>& last_visit_order() const noexcept { return visit_order_; }
    std::string_view op_name(std::size_t entry) const { return entries_.at(entry).op; }

private:
    struct Entry {
        std::string_view op;
        std::vector<Tensor> inputs;
        std::shared_ptr<TensorNode> output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
    std::vector<std::size_t> visit_order_;
};

Tape* active_tape() noexcept;

class TapeScope {
public:
    explicit TapeScope(Tape& tape) noexcept;
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Suspends recording inside its lifetime.
class NoGradScope {
public:
    NoGradScope() noexcept;
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

namespace autograd {

// True when an op over these inputs must be recorded.
bool needs_record(std::initializer_list<const Tensor*> inputs) noexcept;
bool needs_record(std::span<const Tensor> inputs) noexcept;

// Writable gradient of a tensor, zero-allocated on first use.
std::span<double> grad_of(const Tensor& t);

// Builds the op result and records it when any input needs a gradient.
Tensor finish(std::string_view op, Shape shape, Buffer data, std::vector<Tensor> inputs, Tape::BackwardFn backward);

}  // namespace autograd

}  // namespace fragmix
