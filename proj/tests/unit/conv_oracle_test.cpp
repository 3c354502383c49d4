#include <gtest/gtest.h>

#include "asca/ops.hpp"
#include "asca/rng.hpp"
#include "asca/train.hpp"
#include "gradient_suite.hpp"

namespace {

using asca::Rng;
using asca::Scalar;
using asca::Tensor;
namespace ops = asca::ops;

static_assert(sizeof(Scalar) == 8, "built against the 64-bit library");

Tensor fill(asca::Shape shape, Rng& rng, bool integral) {
    std::vector<Scalar> v(static_cast<std::size_t>(asca::numel(shape)));
    for (auto& x : v) x = integral ? Scalar(rng.uniform_int(-4, 4)) : Scalar(rng.uniform() * 2 - 1);
    return Tensor::from(std::move(shape), std::move(v));
}

// Direct six-deep loop over the zero-padded input.
std::vector<double> brute_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const auto O = w.dim(0), K = w.dim(2);
    const auto Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    std::vector<double> out;
    for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t i = 0; i < Ho; ++i)
                for (std::int64_t j = 0; j < Wo; ++j) {
                    double acc = b.defined() ? b.at({o}) : 0.0;
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t u = 0; u < K; ++u)
                            for (std::int64_t v = 0; v < K; ++v) {
                                const auto y = i * stride + u - pad, z = j * stride + v - pad;
                                if (y < 0 || z < 0 || y >= H || z >= W) continue;
                                acc += x.at({n, c, y, z}) * w.at({o, c, u, v});
                            }
                    out.push_back(acc);
                }
    return out;
}

struct ConvShape {
    std::int64_t b, c, h, w, o, k;
    int stride, pad;
};

TEST(ConvOracle, IntegerInputsMatchBruteForceExactly) {
    Rng rng(11);
    for (const ConvShape s : {ConvShape{2, 3, 8, 8, 4, 3, 1, 1}, ConvShape{2, 3, 7, 7, 2, 3, 2, 1},
                              ConvShape{1, 2, 7, 5, 3, 1, 1, 0}, ConvShape{2, 3, 6, 8, 5, 3, 1, 0}}) {
        auto x = fill({s.b, s.c, s.h, s.w}, rng, true);
        auto w = fill({s.o, s.c, s.k, s.k}, rng, true);
        auto b = fill({s.o}, rng, true);
        const auto got = ops::conv2d(x, w, b, s.stride, s.pad).values();
        const auto want = brute_conv(x, w, b, s.stride, s.pad);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], want[i]) << i;
    }
}

TEST(ConvOracle, RealInputsMatchBruteForce) {
    Rng rng(12);
    auto x = fill({2, 3, 8, 8}, rng, false);
    auto w = fill({4, 3, 3, 3}, rng, false);
    const auto got = ops::conv2d(x, w, {}, 1, 1).values();
    const auto want = brute_conv(x, w, {}, 1, 1);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(GradientTolerance, MatmulWithinTighterBound) {
    Rng rng(3);
    auto a = fill({3, 4}, rng, false), b = fill({4, 2}, rng, false);
    const auto r = asca::testing::check_gradients({a, b}, [&] { return ops::sum(ops::matmul(a, b)); });
    EXPECT_LE(r.rel_error, 1e-5);
}

TEST(GradientTolerance, BceWithinTighterBound) {
    Rng rng(4);
    auto z = fill({4, 3}, rng, false);
    for (auto& v : z.data()) v *= 5;
    auto t = fill({4, 3}, rng, false);
    for (auto& v : t.data()) v = (v + 1) / 2;
    const auto r = asca::testing::check_gradients({z}, [&] { return asca::train::bce_with_logits(z, t); });
    EXPECT_LE(r.rel_error, 1e-6);
}

}  // namespace
