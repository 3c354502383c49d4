#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "asca/tensor.hpp"

namespace asca::frontend {

struct Waveform {
    std::vector<double> samples;  // mono, nominally in [-1, 1]
    int sample_rate = 0;

    double duration_seconds() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
};

// PCM WAV reader: 16-bit integer or 32-bit float, mono or stereo. Stereo is
// averaged to mono and integer samples are scaled by 1/32768.
Waveform decode_wav(const std::filesystem::path& path);
Waveform decode_wav_bytes(std::span<const std::uint8_t> bytes);

// 16-bit PCM writer. `channels` > 1 duplicates the mono signal.
std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& wave, int channels = 1);
std::vector<std::uint8_t> encode_wav_float32(const std::vector<std::vector<double>>& channels, int sample_rate);
void write_wav_pcm16(const std::filesystem::path& path, const Waveform& wave);

struct FrontendParams {
    double win_ms = 25.0;
    double hop_ms = 10.0;
    int n_mels = 128;
    double fmin = 20.0;
    double fmax = 0.0;  // 0 selects the Nyquist frequency
    // Reflect-pad half a window on each side so the first frame is centered
    // on the first sample. Off by default: frames start at sample 0.
    bool center = false;
    int canvas_height = 224;
    int canvas_width = 224;

    int win_length(int sample_rate) const;
    int hop_length(int sample_rate) const;
    // Window length rounded up to a power of two.
    int n_fft(int sample_rate) const;
    double resolved_fmax(int sample_rate) const;
    // Throws ConfigError when the band or sizes are invalid for `sample_rate`.
    void validate(int sample_rate) const;
};

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
    int n_mels = 0;
    int n_bins = 0;               // n_fft / 2 + 1
    std::vector<double> weights;  // n_mels x n_bins, row-major
    std::vector<double> points_hz;  // n_mels + 2 edge/center frequencies

    double weight(int mel, int bin) const { return weights[static_cast<std::size_t>(mel) * n_bins + bin]; }
    double center_hz(int mel) const { return points_hz[static_cast<std::size_t>(mel) + 1]; }
};

// Triangular filters, linear in Hz, whose edges and centers are equally
// spaced on the mel scale between fmin and fmax.
MelFilterbank mel_filterbank(const FrontendParams& params, int sample_rate);

struct Spectrogram {
    int n_mels = 0;
    int n_frames = 0;
    std::vector<float> values;  // n_mels x n_frames, row-major
    int sample_rate = 0;
    FrontendParams params;

    float at(int mel, int frame) const { return values[static_cast<std::size_t>(mel) * n_frames + frame]; }
};

inline constexpr double kPowerFloor = 1e-10;

// Hamming-windowed STFT power, mel projection, natural log with a floor of
// log(1e-10).
Spectrogram log_mel_spectrogram(const Waveform& wave, const FrontendParams& params);

// Corner-aligned bilinear resize of a row-major grid.
std::vector<double> resize_bilinear(std::span<const double> grid, int rows, int cols, int out_rows, int out_cols);

// Resizes to the canvas and standardizes to zero mean / unit variance.
// Returns a [1 x canvas_height x canvas_width] tensor.
Tensor fit_to_canvas(const Spectrogram& spec);
Tensor fit_to_canvas(std::span<const float> values, int n_mels, int n_frames, int height = 224, int width = 224);

}  // namespace asca::frontend
