#pragma once

// Helpers for implementing differentiable ops. Not part of the public API.

#include <initializer_list>
#include <span>
#include <vector>

#include "asca/tensor.hpp"

namespace asca::detail {

// Gradient buffer of `t`, allocated (zero-filled) on first use.
std::span<Scalar> grad_buffer(TensorImpl& t);

bool wants_grad(std::initializer_list<const Tensor*> inputs);

// Wraps `data` into a tensor after the finiteness check and, when a tape is
// active and any input requires grad, records `backward` for it.
Tensor finish(const char* op, Shape shape, Buffer data,
              std::initializer_list<const Tensor*> inputs, BackwardFn backward);

}  // namespace asca::detail
