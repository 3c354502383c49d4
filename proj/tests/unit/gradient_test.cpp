#include <gtest/gtest.h>

#include "gradient_suite.hpp"

namespace {

using asca::testing::GradCase;

class Gradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(Gradient, MatchesCentralDifferences) {
    const auto report = GetParam().run();
    EXPECT_GT(report.coords, 0);
    EXPECT_LE(report.rel_error, asca::testing::kGradTolerance);
}

INSTANTIATE_TEST_SUITE_P(AllOps, Gradient, ::testing::ValuesIn(asca::testing::gradient_cases()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
