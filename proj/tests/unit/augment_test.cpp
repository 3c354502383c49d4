#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "asca/augment.hpp"
#include "asca/regularize.hpp"
#include "asca/train.hpp"

namespace {

using asca::Rng;
using asca::Scalar;
using asca::Tensor;
namespace aug = asca::augment;
namespace fe = asca::frontend;

Tensor random_tensor(asca::Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Scalar> v(static_cast<std::size_t>(asca::numel(shape)));
    for (auto& x : v) x = static_cast<Scalar>(rng.normal());
    return Tensor::from(std::move(shape), std::move(v));
}

fe::Waveform random_wave(std::size_t n, std::uint64_t seed, double amp = 0.3) {
    Rng rng(seed);
    fe::Waveform w;
    w.sample_rate = 16000;
    for (std::size_t i = 0; i < n; ++i) w.samples.push_back(amp * (2 * rng.uniform() - 1));
    return w;
}

TEST(Mixup, EndpointIsBitwiseIdentity) {
    const auto a = random_tensor({1, 8, 8}, 1), b = random_tensor({1, 8, 8}, 2);
    const aug::Labels ya = {1, 0, 0}, yb = {0, 0, 1};
    const auto m = aug::mixup(a, b, ya, yb, 1);
    EXPECT_EQ(m.x.values(), a.values());
    EXPECT_EQ(m.y, ya);
}

TEST(Mixup, Midpoint) {
    const auto m = aug::mixup(Tensor::zeros({2, 2}), Tensor::full({2, 2}, 2), {1, 0}, {0, 1}, Scalar(0.5));
    for (auto v : m.x.values()) EXPECT_EQ(v, 1);
    EXPECT_EQ(m.y, (aug::Labels{Scalar(0.5), Scalar(0.5)}));
}

TEST(Mixup, ConvexCombinationOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_tensor({1, 4, 5}, 10 + trial), b = random_tensor({1, 4, 5}, 50 + trial);
        const auto lambda = static_cast<Scalar>(rng.beta(0.5, 0.5));
        aug::Labels ya(4, 0), yb(4, 0);
        ya[trial % 4] = 1;
        yb[(trial + 1) % 4] = 1;
        const auto m = aug::mixup(a, b, ya, yb, lambda);
        for (std::size_t i = 0; i < a.values().size(); ++i) {
            EXPECT_EQ(m.x.values()[i], lambda * a.values()[i] + (Scalar(1) - lambda) * b.values()[i]);
        }
        Scalar total = 0;
        for (auto v : m.y) {
            EXPECT_GE(v, 0);
            EXPECT_LE(v, 1);
            total += v;
        }
        EXPECT_NEAR(total, 1, 1e-6);
    }
    EXPECT_THROW(aug::mixup(Tensor::zeros({2}), Tensor::zeros({3}), {}, {}, 1), asca::ShapeError);
}

TEST(SpecMask, ZeroCountsIsIdentity) {
    const auto s = random_tensor({1, 16, 20}, 4);
    auto cfg = aug::AugmentConfig::identity();
    cfg.masking = true;
    cfg.n_freq_masks = 0;
    cfg.n_time_masks = 0;
    Rng rng(1);
    EXPECT_EQ(aug::spec_mask(s, cfg, rng).values(), s.values());
}

TEST(SpecMask, FullHeightBandFillsWithMean) {
    const auto s = random_tensor({1, 6, 7}, 5);
    double mean = 0;
    for (auto v : s.values()) mean += v;
    mean /= s.numel();
    const auto out = aug::apply_masks(s, {{true, 0, 6}});
    for (auto v : out.values()) EXPECT_FLOAT_EQ(v, static_cast<Scalar>(mean));
}

TEST(SpecMask, MaskedCellsMatchBandSetOracle) {
    aug::AugmentConfig cfg;
    cfg.n_freq_masks = 3;
    cfg.freq_mask_max = 6;
    cfg.n_time_masks = 3;
    cfg.time_mask_max = 9;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto s = random_tensor({1, 20, 30}, 100 + seed);
        Rng plan_rng(seed), mask_rng(seed);
        const auto bands = aug::plan_masks(cfg, 20, 30, plan_rng);
        const auto out = aug::spec_mask(s, cfg, mask_rng);
        ASSERT_EQ(out.shape(), s.shape());
        std::set<int> cells;
        for (const auto& b : bands) {
            EXPECT_LE(b.width, b.along_freq ? 6 : 9);
            for (int i = b.start; i < b.start + b.width; ++i) {
                for (int j = 0; j < (b.along_freq ? 30 : 20); ++j) cells.insert(b.along_freq ? i * 30 + j : j * 30 + i);
            }
        }
        double mean = 0;
        for (auto v : s.values()) mean += v;
        mean /= s.numel();
        for (int i = 0; i < 600; ++i) {
            if (cells.count(i)) {
                EXPECT_FLOAT_EQ(out.values()[i], static_cast<Scalar>(mean));
            } else {
                EXPECT_EQ(out.values()[i], s.values()[i]);
            }
        }
    }
}

TEST(SpecMask, RngDeterminesPlacement) {
    aug::AugmentConfig cfg;
    const auto s = random_tensor({1, 224, 224}, 6);
    Rng a(9), b(9), c(10);
    EXPECT_EQ(aug::spec_mask(s, cfg, a).values(), aug::spec_mask(s, cfg, b).values());
    EXPECT_NE(aug::spec_mask(s, cfg, c).values(), aug::spec_mask(s, cfg, a).values());
}

TEST(Noise, ZeroGainIsIdentity) {
    const auto x = random_wave(1000, 1), n = random_wave(3000, 2);
    Rng rng(0);
    EXPECT_EQ(aug::add_background_noise(x, n, 0.0, rng).samples, x.samples);
}

TEST(Noise, SelfNoiseScalesByOnePointTwoFive) {
    auto x = random_wave(500, 3, 0.9);
    Rng rng(0);
    const auto out = aug::add_background_noise(x, x, 0.25, rng);
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
        EXPECT_DOUBLE_EQ(out.samples[i], std::clamp(1.25 * x.samples[i], -1.0, 1.0));
    }
}

TEST(Noise, UncorrelatedNoiseAddsEnergy) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = random_wave(4000, 10 + seed), n = random_wave(9000, 50 + seed);
        Rng rng(seed);
        EXPECT_GE(aug::rms(aug::add_background_noise(x, n, 0.25, rng).samples), aug::rms(x.samples));
    }
}

TEST(Noise, RelativeLevelAndTiling) {
    // Short noise is tiled; the added component has rms = gain * rms(x).
    auto x = random_wave(1000, 4, 0.1);
    fe::Waveform n;
    n.sample_rate = 16000;
    n.samples = {0.5, -0.5, 0.25};
    Rng rng(0);
    const auto out = aug::add_background_noise(x, n, 0.5, rng);
    std::vector<double> added(x.samples.size());
    for (std::size_t i = 0; i < added.size(); ++i) added[i] = out.samples[i] - x.samples[i];
    EXPECT_NEAR(aug::rms(added), 0.5 * aug::rms(x.samples), 1e-12);
    EXPECT_NEAR(added[3] / added[0], 1.0, 1e-12);
}

TEST(Noise, SilentSourceIsSkipped) {
    const auto x = random_wave(100, 5);
    fe::Waveform silent;
    silent.sample_rate = 16000;
    silent.samples.assign(200, 0.0);
    Rng rng(0);
    EXPECT_EQ(aug::add_background_noise(x, silent, 0.25, rng).samples, x.samples);
    silent.sample_rate = 8000;
    EXPECT_THROW(aug::add_background_noise(x, silent, 0.25, rng), asca::ConfigError);
}

TEST(AugmentConfig, Validation) {
    aug::AugmentConfig cfg;
    EXPECT_NO_THROW(cfg.validate(224, 224));
    EXPECT_EQ(cfg.noise_gain, 0.25);
    cfg.mixup_alpha = 0;
    EXPECT_THROW(cfg.validate(224, 224), asca::ConfigError);
    cfg = {};
    cfg.freq_mask_max = 300;
    EXPECT_THROW(cfg.validate(224, 224), asca::ConfigError);
    cfg = {};
    cfg.noise_gain = 1.5;
    EXPECT_THROW(cfg.validate(224, 224), asca::ConfigError);
}

TEST(IdentityPipeline, CanvasEqualsPlainFrontendBitwise) {
    asca::train::Dataset data;
    data.classes = {"a", "b"};
    const auto wave = random_wave(16000, 7);
    const auto spec = fe::log_mel_spectrogram(wave, data.frontend);
    asca::train::Example ex;
    ex.id = "x";
    ex.labels = {0};
    ex.n_mels = spec.n_mels;
    ex.n_frames = spec.n_frames;
    ex.values = spec.values;
    ex.wave = wave;
    data.examples.push_back(ex);
    const std::vector<fe::Waveform> noise = {random_wave(20000, 8)};
    Rng rng(1);
    const auto canvas = asca::train::example_canvas(data, 0, aug::AugmentConfig::identity(), noise, rng);
    EXPECT_EQ(canvas.values(), fe::fit_to_canvas(spec).values());

    // Enabled but neutral settings are identities as well.
    aug::AugmentConfig neutral;
    neutral.noise_gain = 0;
    neutral.n_freq_masks = 0;
    neutral.n_time_masks = 0;
    Rng rng2(1);
    EXPECT_EQ(asca::train::example_canvas(data, 0, neutral, noise, rng2).values(), canvas.values());
}

TEST(StochasticDepth, ZeroProbabilityAndEvalMode) {
    const auto r = random_tensor({6, 2, 3}, 11), id = random_tensor({6, 2, 3}, 12);
    const auto sum = asca::ops::add(id, r).values();
    Rng rng(1);
    EXPECT_EQ(asca::train::stochastic_depth(r, id, 0.0, asca::ops::Mode::kTrain, &rng).values(), sum);
    EXPECT_EQ(asca::train::stochastic_depth(r, id, 0.5, asca::ops::Mode::kEval, nullptr).values(), sum);
    EXPECT_THROW(asca::train::stochastic_depth(r, id, 1.0, asca::ops::Mode::kTrain, &rng), asca::ConfigError);
}

TEST(StochasticDepth, MonteCarloExpectationMatchesEval) {
    const auto r = random_tensor({1, 4}, 13), id = random_tensor({1, 4}, 14);
    const auto expect = asca::ops::add(id, r).values();
    const double p = 0.3;
    const int draws = 10000;
    Rng rng(2);
    std::vector<double> acc(4, 0.0);
    for (int i = 0; i < draws; ++i) {
        const auto y = asca::train::stochastic_depth(r, id, p, asca::ops::Mode::kTrain, &rng).values();
        for (int j = 0; j < 4; ++j) acc[j] += y[j];
    }
    for (int j = 0; j < 4; ++j) {
        // Per draw the residual term has sd |r| sqrt(p / (1 - p)).
        const double sd = std::abs(r.values()[j]) * std::sqrt(p / (1 - p)) / std::sqrt(draws);
        EXPECT_NEAR(acc[j] / draws, expect[j], 4 * sd + 1e-6);
    }
}

}  // namespace
