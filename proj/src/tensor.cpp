#include "asca/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "asca/autograd.hpp"
#include "asca/ops.hpp"

namespace asca {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<std::size_t>(asca::numel(shape)), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, const std::vector<Scalar>& data, bool requires_grad) {
    return from_buffer(std::move(shape), Buffer(data.begin(), data.end()), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, Buffer data, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    if (asca::numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
    }
    ops::check_finite(data, "from");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return from({1}, {value}, requires_grad); }

std::int64_t Tensor::dim(int axis) const {
    const int n = ndim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis out of range for " + to_string(shape()));
    return impl_->shape[static_cast<std::size_t>(axis)];
}

Tensor& Tensor::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

Scalar Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
}

Scalar Tensor::at(std::initializer_list<std::int64_t> index) const {
    if (index.size() != impl_->shape.size()) throw ShapeError("index rank mismatch for " + to_string(shape()));
    std::int64_t offset = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        const auto extent = impl_->shape[axis++];
        if (i < 0 || i >= extent) throw ShapeError("index out of range for " + to_string(shape()));
        offset = offset * extent + i;
    }
    return impl_->data[static_cast<std::size_t>(offset)];
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

void Tape::record(TapeRecord rec) { records_.push_back(std::move(rec)); }

void Tape::reset() { records_.clear(); }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got " +
                            (loss.defined() ? to_string(loss.shape()) : std::string("undefined tensor")));
    }
    if (!loss.requires_grad()) {
        reset();
        throw ContractError("loss does not depend on any tensor that requires grad");
    }
    detail::grad_buffer(*loss.impl())[0] += Scalar(1);

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        TensorImpl& out = *it->output;
        if (out.grad.empty()) continue;
        it->backward(out.grad);
        // Interior gradients are no longer needed once propagated.
        if (it->output.get() != loss.impl()) Buffer().swap(out.grad);
    }
    for (const auto& rec : records_) {
        for (const auto& in : rec.inputs) {
            if (in->is_leaf && in->requires_grad) detail::grad_buffer(*in);
        }
    }
    reset();
}

TapeGuard::TapeGuard(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeGuard::~TapeGuard() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace detail {

std::span<Scalar> grad_buffer(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), Scalar(0));
    return t.grad;
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

Tensor finish(const char* op, Shape shape, Buffer data,
              std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
    ops::check_finite(data, op);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (wants_grad(inputs)) {
        impl->requires_grad = true;
        impl->is_leaf = false;
        TapeRecord rec;
        rec.op = op;
        for (const Tensor* t : inputs) {
            if (t != nullptr && t->defined()) rec.inputs.push_back(t->shared());
        }
        rec.output = impl;
        rec.backward = std::move(backward);
        g_active_tape->record(std::move(rec));
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

namespace ops {

void check_finite(std::span<const Scalar> values, const char* op) {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    if (Eigen::Map<const Array>(values.data(), static_cast<Eigen::Index>(values.size())).allFinite()) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                               std::to_string(i));
        }
    }
}

}  // namespace ops

}  // namespace asca
