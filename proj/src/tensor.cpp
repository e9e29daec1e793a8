#include "fragmix/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fragmix {

namespace {
thread_local Tape* t_active_tape = nullptr;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

Tensor::Tensor() : Tensor(Shape{0}, Buffer{}) {}

Tensor::Tensor(Shape shape, Buffer data, bool requires_grad) : node_(std::make_shared<TensorNode>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                             " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, std::span<const double> values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Buffer{value}); }

Tensor Tensor::eye(std::size_t n) {
    Buffer d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor(Shape{n, n}, std::move(d));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return node_->shape[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
    return node_->shape[1];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->data.at(i * cols() + j); }

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, Buffer(node_->data)); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), Buffer(node_->data));
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn backward) {
    entries_.push_back(Entry{op, std::move(inputs), output.node(), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw DimensionError("backward() needs a single-element loss, got " + shape_str(loss.shape()));
    autograd::grad_of(loss)[0] += 1.0;
    visit_order_.clear();
    for (std::size_t e = entries_.size(); e-- > 0;) {
        Entry& entry = entries_[e];
        if (entry.output->grad.empty()) continue;
        visit_order_.push_back(e);
        entry.backward({entry.output->grad.data(), entry.output->grad.size()});
    }
}

Tape* active_tape() noexcept { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() noexcept : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

namespace autograd {

bool needs_record(std::initializer_list<const Tensor*> inputs) noexcept {
    if (t_active_tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool needs_record(std::span<const Tensor> inputs) noexcept {
    if (t_active_tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

std::span<double> grad_of(const Tensor& t) {
    TensorNode& node = *t.node();
    if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
    return {node.grad.data(), node.grad.size()};
}

Tensor finish(std::string_view op, Shape shape, Buffer data, std::vector<Tensor> inputs, Tape::BackwardFn backward) {
    const bool record = needs_record(std::span<const Tensor>(inputs));
    Tensor out(std::move(shape), std::move(data), record);
    if (record) t_active_tape->record(op, std::move(inputs), out, std::move(backward));
    return out;
}

}  // namespace autograd

}  // namespace fragmix
