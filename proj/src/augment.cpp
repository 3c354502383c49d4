#include "asca/augment.hpp"

#include <algorithm>
#include <cmath>

#include "asca/log.hpp"

namespace asca::augment {

AugmentConfig AugmentConfig::identity() {
    AugmentConfig cfg;
    cfg.mixup = false;
    cfg.masking = false;
    cfg.n_freq_masks = 0;
    cfg.n_time_masks = 0;
    cfg.noise = false;
    cfg.noise_gain = 0.0;
    return cfg;
}

void AugmentConfig::validate(int height, int width) const {
    if (!(mixup_alpha > 0.0)) throw ConfigError("augment: mixup_alpha must be > 0");
    if (n_freq_masks < 0 || n_time_masks < 0) throw ConfigError("augment: mask counts must be >= 0");
    if (freq_mask_max < 0 || freq_mask_max > height) {
        throw ConfigError("augment: freq_mask_max must lie in [0, " + std::to_string(height) + "]");
    }
    if (time_mask_max < 0 || time_mask_max > width) {
        throw ConfigError("augment: time_mask_max must lie in [0, " + std::to_string(width) + "]");
    }
    if (noise_gain < 0.0 || noise_gain > 1.0) throw ConfigError("augment: noise_gain must lie in [0, 1]");
    if (noise_probability < 0.0 || noise_probability > 1.0) {
        throw ConfigError("augment: noise_probability must lie in [0, 1]");
    }
}

Mixed mixup(const Tensor& x1, const Tensor& x2, const Labels& y1, const Labels& y2, Scalar lambda) {
    if (x1.shape() != x2.shape()) {
        throw ShapeError("mixup: inputs " + to_string(x1.shape()) + " and " + to_string(x2.shape()));
    }
    if (y1.size() != y2.size()) throw ShapeError("mixup: label vectors differ in length");
    if (lambda < 0 || lambda > 1) throw ConfigError("mixup: lambda outside [0, 1]");
    const Scalar rest = Scalar(1) - lambda;
    std::vector<Scalar> data(static_cast<std::size_t>(x1.numel()));
    const auto& a = x1.values();
    const auto& b = x2.values();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = lambda * a[i] + rest * b[i];
    Labels y(y1.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = lambda * y1[i] + rest * y2[i];
    return {Tensor::from(x1.shape(), std::move(data)), std::move(y)};
}

std::vector<Band> plan_masks(const AugmentConfig& cfg, int height, int width, Rng& rng) {
    std::vector<Band> bands;
    auto draw = [&](bool along_freq, int count, int max_width, int extent) {
        for (int i = 0; i < count; ++i) {
            const int w = static_cast<int>(rng.uniform_int(0, std::min(max_width, extent)));
            const int start = static_cast<int>(rng.uniform_int(0, extent - w));
            bands.push_back({along_freq, start, w});
        }
    };
    draw(true, cfg.n_freq_masks, cfg.freq_mask_max, height);
    draw(false, cfg.n_time_masks, cfg.time_mask_max, width);
    return bands;
}

Tensor apply_masks(const Tensor& s, const std::vector<Band>& bands) {
    if (s.ndim() != 3) throw ShapeError("spec_mask: expected [C x H x W], got " + to_string(s.shape()));
    Tensor out = s.detach();
    if (bands.empty()) return out;
    const auto channels = s.dim(0), height = s.dim(1), width = s.dim(2);
    double total = 0.0;
    for (Scalar v : s.values()) total += v;
    const auto fill = static_cast<Scalar>(total / static_cast<double>(s.numel()));
    auto data = out.data();
    for (const auto& band : bands) {
        for (std::int64_t c = 0; c < channels; ++c) {
            Scalar* plane = data.data() + c * height * width;
            if (band.along_freq) {
                for (int r = band.start; r < band.start + band.width && r < height; ++r) {
                    std::fill_n(plane + r * width, width, fill);
                }
            } else {
                for (std::int64_t r = 0; r < height; ++r) {
                    for (int col = band.start; col < band.start + band.width && col < width; ++col) {
                        plane[r * width + col] = fill;
                    }
                }
            }
        }
    }
    return out;
}

Tensor spec_mask(const Tensor& s, const AugmentConfig& cfg, Rng& rng) {
    if (s.ndim() != 3) throw ShapeError("spec_mask: expected [C x H x W], got " + to_string(s.shape()));
    const auto bands = plan_masks(cfg, static_cast<int>(s.dim(1)), static_cast<int>(s.dim(2)), rng);
    return apply_masks(s, bands);
}

double rms(const std::vector<double>& samples) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (double v : samples) acc += v * v;
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

frontend::Waveform add_background_noise(const frontend::Waveform& x, const frontend::Waveform& noise, double gain,
                                        Rng& rng) {
    if (noise.sample_rate != x.sample_rate) {
        throw ConfigError("background noise at " + std::to_string(noise.sample_rate) + " Hz, signal at " +
                          std::to_string(x.sample_rate) + " Hz");
    }
    if (gain < 0.0 || gain > 1.0) throw ConfigError("background noise gain must lie in [0, 1]");
    if (noise.samples.empty()) {
        log_warning("background noise clip is empty; skipped");
        return x;
    }
    const std::size_t n = x.samples.size();
    const std::size_t m = noise.samples.size();
    const std::size_t offset =
        m > n ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(m - n))) : 0;
    std::vector<double> window(n);
    for (std::size_t i = 0; i < n; ++i) window[i] = noise.samples[(offset + i) % m];

    const double noise_rms = rms(window);
    if (noise_rms == 0.0) {
        log_warning("background noise window is silent; skipped");
        return x;
    }
    const double k = gain * rms(x.samples) / noise_rms;
    frontend::Waveform out;
    out.sample_rate = x.sample_rate;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = std::clamp(x.samples[i] + k * window[i], -1.0, 1.0);
    return out;
}

}  // namespace asca::augment
