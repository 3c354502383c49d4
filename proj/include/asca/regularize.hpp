#pragma once

#include "asca/ops.hpp"
#include "asca/rng.hpp"

namespace asca::train {

// Per-example stochastic depth. Train mode: each example keeps `identity`
// alone with probability p, otherwise identity + residual / (1 - p).
// Eval mode returns identity + residual and never touches `rng`.
Tensor stochastic_depth(const Tensor& residual, const Tensor& identity, double p, ops::Mode mode, Rng* rng);

}  // namespace asca::train
