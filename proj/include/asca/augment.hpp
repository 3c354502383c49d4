#pragma once

#include <string>
#include <utility>
#include <vector>

#include "asca/frontend.hpp"
#include "asca/rng.hpp"
#include "asca/tensor.hpp"

namespace asca::augment {

struct AugmentConfig {
    bool mixup = true;
    double mixup_alpha = 0.5;

    bool masking = true;
    int n_freq_masks = 2;
    int freq_mask_max = 24;
    int n_time_masks = 2;
    int time_mask_max = 48;

    bool noise = true;
    double noise_gain = 0.25;
    double noise_probability = 1.0;
    std::string noise_dir;  // directory of WAV clips; empty disables noise

    // Every augmentation switched off.
    static AugmentConfig identity();
    // Throws ConfigError. `height`/`width` are the canvas extents masks apply to.
    void validate(int height, int width) const;
};

using Labels = std::vector<Scalar>;

struct Mixed {
    Tensor x;
    Labels y;
};

// x = lambda * x1 + (1 - lambda) * x2, same for the labels.
Mixed mixup(const Tensor& x1, const Tensor& x2, const Labels& y1, const Labels& y2, Scalar lambda);

struct Band {
    bool along_freq;  // rows when true, columns otherwise
    int start;
    int width;
};

// Draws mask bands for a height x width canvas; rng alone decides placement.
std::vector<Band> plan_masks(const AugmentConfig& cfg, int height, int width, Rng& rng);
// Fills each band with the mean of `s` (computed before masking). `s` is
// [C x H x W] and every channel is masked identically.
Tensor apply_masks(const Tensor& s, const std::vector<Band>& bands);
Tensor spec_mask(const Tensor& s, const AugmentConfig& cfg, Rng& rng);

double rms(const std::vector<double>& samples);

// out = clamp(x + gain * rms(x) / rms(window) * window, -1, 1) where window is
// a random |x|-long slice of `noise`, tiled when the clip is shorter. A silent
// window leaves `x` unchanged and logs a warning.
frontend::Waveform add_background_noise(const frontend::Waveform& x, const frontend::Waveform& noise, double gain,
                                        Rng& rng);

}  // namespace asca::augment
