#pragma once

#include <functional>
#include <string>
#include <vector>

#include "asca/tensor.hpp"

namespace asca::testing {

struct GradReport {
    double rel_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    std::int64_t coords = 0;
};

// Central differences with step h against the taped gradient of `loss_fn`
// with respect to every entry of `leaves`. `max_coords` > 0 checks an evenly
// strided subset of each leaf.
GradReport check_gradients(std::vector<Tensor> leaves, const std::function<Tensor()>& loss_fn, double h = 1e-5,
                           std::int64_t max_coords = 0);

struct GradCase {
    std::string name;
    std::function<GradReport()> run;
};

// Every differentiable op plus the micro end-to-end model.
const std::vector<GradCase>& gradient_cases();

inline constexpr double kGradTolerance = 1e-4;

}  // namespace asca::testing
