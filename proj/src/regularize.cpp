#include "asca/regularize.hpp"

#include <vector>

namespace asca::train {

Tensor stochastic_depth(const Tensor& residual, const Tensor& identity, double p, ops::Mode mode, Rng* rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("stochastic_depth: p must lie in [0, 1)");
    if (mode == ops::Mode::kEval || p == 0.0) return ops::add(identity, residual);
    if (rng == nullptr) throw ContractError("stochastic_depth: train mode with p > 0 needs an rng");
    const auto batch = residual.dim(0);
    std::vector<Scalar> keep(static_cast<std::size_t>(batch));
    const auto survivor = static_cast<Scalar>(1.0 / (1.0 - p));
    for (auto& k : keep) k = rng->bernoulli(p) ? Scalar(0) : survivor;
    return ops::add(identity, ops::scale_rows(residual, keep));
}

}  // namespace asca::train
