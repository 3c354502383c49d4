#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "asca/errors.hpp"

namespace asca {

// The library is compiled twice: once with 32-bit scalars for training and
// once with ASCA_DOUBLE for finite-difference verification.
#ifdef ASCA_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::int64_t>;

// Storage for tensor data, gradients and kernel scratch. Eigen peels leading
// elements up to the SIMD alignment before vectorizing a reduction, so the
// summation order depends on the buffer address; a fixed 64-byte alignment
// keeps results bitwise reproducible from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlignment = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlignment)));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t(kAlignment)); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<Scalar, AlignedAllocator<Scalar>>;

inline bool operator==(const Buffer& a, const std::vector<Scalar>& b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until a backward pass reaches this tensor
    bool requires_grad = false;
    bool is_leaf = true;
};

// Shared-handle dense tensor. Copies alias the same storage; use clone() for
// a deep copy. Only the optimizer and explicit in-place helpers mutate data.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor from(Shape shape, const std::vector<Scalar>& data, bool requires_grad = false);
    static Tensor from_buffer(Shape shape, Buffer data, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(int axis) const;
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::span<Scalar> data() { return impl_->data; }
    std::span<const Scalar> data() const { return impl_->data; }
    const Buffer& values() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const Scalar> grad() const { return impl_->grad; }
    std::span<Scalar> mutable_grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return impl_->is_leaf; }

    Scalar item() const;
    Scalar at(std::initializer_list<std::int64_t> index) const;

    // Deep copy with no autograd history.
    Tensor clone() const;
    // Same storage, cut from the graph.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<void(std::span<const Scalar> grad_out)>;

struct TapeRecord {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
};

// Ordered record of differentiable ops. Ops append to the tape that is active
// on the current thread (see TapeGuard); records are therefore already in
// topological order and backward() simply walks them in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(TapeRecord rec);
    // Accumulates d(loss)/d(leaf) into every leaf reachable from the tape and
    // resets the tape. Leaves recorded but not on a path to loss get zeros.
    void backward(const Tensor& loss);
    void reset();
    std::size_t size() const { return records_.size(); }
    const std::vector<TapeRecord>& records() const { return records_; }

private:
    std::vector<TapeRecord> records_;
};

// Makes `tape` the recording target for ops on this thread for the guard's
// lifetime. Without an active tape ops build no graph (inference mode).
class TapeGuard {
public:
    explicit TapeGuard(Tape& tape);
    ~TapeGuard();
    TapeGuard(const TapeGuard&) = delete;
    TapeGuard& operator=(const TapeGuard&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

void backward(const Tensor& loss, Tape& tape);

}  // namespace asca
