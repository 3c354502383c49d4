#include "asca/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <mutex>
#include <numbers>

namespace asca::frontend {

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return std::uint32_t(b[at]) | (std::uint32_t(b[at + 1]) << 8) | (std::uint32_t(b[at + 2]) << 16) |
           (std::uint32_t(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
    return std::memcmp(b.data() + at, tag, 4) == 0;
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::vector<std::uint8_t> wav_header(std::uint16_t format, int channels, int sample_rate, int bits,
                                     std::uint32_t data_bytes) {
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, format);
    put_u16(out, static_cast<std::uint16_t>(channels));
    put_u32(out, static_cast<std::uint32_t>(sample_rate));
    const int block_align = channels * bits / 8;
    put_u32(out, static_cast<std::uint32_t>(sample_rate * block_align));
    put_u16(out, static_cast<std::uint16_t>(block_align));
    put_u16(out, static_cast<std::uint16_t>(bits));
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    return out;
}

}  // namespace

Waveform decode_wav_bytes(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF")) throw DecodeError("wav: missing RIFF tag");
    if (!tag_is(bytes, 8, "WAVE")) throw DecodeError("wav: RIFF form type is not WAVE");

    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    std::span<const std::uint8_t> data;
    bool have_data = false;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = read_u32(bytes, pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) {
            // Truncated trailing data chunks are tolerated; anything else is not.
            if (!tag_is(bytes, pos, "data")) throw DecodeError("wav: chunk size exceeds file length");
        }
        const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
        if (tag_is(bytes, pos, "fmt ")) {
            if (avail < 16) throw DecodeError("wav: fmt chunk shorter than 16 bytes");
            format = read_u16(bytes, body);
            channels = read_u16(bytes, body + 2);
            sample_rate = read_u32(bytes, body + 4);
            bits = read_u16(bytes, body + 14);
            if (format == kFormatExtensible) {
                if (avail < 26) throw DecodeError("wav: extensible fmt chunk too short");
                format = read_u16(bytes, body + 24);
            }
            have_fmt = true;
        } else if (tag_is(bytes, pos, "data")) {
            data = bytes.subspan(body, avail);
            have_data = true;
        }
        pos = body + size + (size & 1u);
    }
    if (!have_fmt) throw DecodeError("wav: missing fmt chunk");
    if (!have_data) throw DecodeError("wav: missing data chunk");
    if (channels != 1 && channels != 2) {
        throw DecodeError("wav: unsupported channel count " + std::to_string(channels));
    }
    if (sample_rate == 0) throw DecodeError("wav: sample_rate is zero");
    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool float32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !float32) {
        throw DecodeError("wav: unsupported codec (format tag " + std::to_string(format) + ", bits_per_sample " +
                          std::to_string(bits) + ")");
    }

    const std::size_t frame_bytes = static_cast<std::size_t>(channels) * bits / 8;
    const std::size_t frames = data.size() / frame_bytes;
    Waveform wave;
    wave.sample_rate = static_cast<int>(sample_rate);
    wave.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t at = f * frame_bytes + c * (bits / 8);
            if (pcm16) {
                acc += static_cast<std::int16_t>(read_u16(data, at)) / 32768.0;
            } else {
                const std::uint32_t raw = read_u32(data, at);
                float v;
                std::memcpy(&v, &raw, sizeof v);
                acc += v;
            }
        }
        wave.samples[f] = acc / channels;
    }
    return wave;
}

Waveform decode_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open audio file " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_wav_bytes(bytes);
    } catch (const DecodeError& e) {
        throw DecodeError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& wave, int channels) {
    const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * channels * 2);
    auto out = wav_header(kFormatPcm, channels, wave.sample_rate, 16, data_bytes);
    for (double s : wave.samples) {
        const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
        const auto v = static_cast<std::int16_t>(std::lround(clamped * 32768.0));
        for (int c = 0; c < channels; ++c) put_u16(out, static_cast<std::uint16_t>(v));
    }
    return out;
}

std::vector<std::uint8_t> encode_wav_float32(const std::vector<std::vector<double>>& channels, int sample_rate) {
    const std::size_t frames = channels.empty() ? 0 : channels.front().size();
    const auto data_bytes = static_cast<std::uint32_t>(frames * channels.size() * 4);
    auto out = wav_header(kFormatFloat, static_cast<int>(channels.size()), sample_rate, 32, data_bytes);
    for (std::size_t f = 0; f < frames; ++f) {
        for (const auto& ch : channels) {
            const float v = static_cast<float>(ch[f]);
            std::uint32_t raw;
            std::memcpy(&raw, &v, sizeof raw);
            put_u32(out, raw);
        }
    }
    return out;
}

void write_wav_pcm16(const std::filesystem::path& path, const Waveform& wave) {
    const auto bytes = encode_wav_pcm16(wave);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

int FrontendParams::win_length(int sample_rate) const {
    return static_cast<int>(std::lround(sample_rate * win_ms / 1000.0));
}

int FrontendParams::hop_length(int sample_rate) const {
    return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

int FrontendParams::n_fft(int sample_rate) const {
    int n = 1;
    while (n < win_length(sample_rate)) n <<= 1;
    return n;
}

double FrontendParams::resolved_fmax(int sample_rate) const {
    return fmax > 0.0 ? fmax : sample_rate / 2.0;
}

void FrontendParams::validate(int sample_rate) const {
    if (sample_rate <= 0) throw ConfigError("frontend: sample_rate must be positive");
    if (n_mels < 1) throw ConfigError("frontend: n_mels must be >= 1");
    if (win_length(sample_rate) < 2 || hop_length(sample_rate) < 1) {
        throw ConfigError("frontend: window/hop too short for sample rate " + std::to_string(sample_rate));
    }
    const double top = resolved_fmax(sample_rate);
    if (top > sample_rate / 2.0) {
        throw ConfigError("frontend: fmax " + std::to_string(top) + " Hz exceeds Nyquist " +
                          std::to_string(sample_rate / 2.0) + " Hz");
    }
    if (fmin < 0.0 || fmin >= top) throw ConfigError("frontend: need 0 <= fmin < fmax");
    if (canvas_height < 1 || canvas_width < 1) throw ConfigError("frontend: canvas must be non-empty");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(const FrontendParams& params, int sample_rate) {
    params.validate(sample_rate);
    const int n_fft = params.n_fft(sample_rate);
    MelFilterbank fb;
    fb.n_mels = params.n_mels;
    fb.n_bins = n_fft / 2 + 1;
    fb.weights.assign(static_cast<std::size_t>(fb.n_mels) * fb.n_bins, 0.0);

    const double lo = hz_to_mel(params.fmin);
    const double hi = hz_to_mel(params.resolved_fmax(sample_rate));
    fb.points_hz.resize(static_cast<std::size_t>(fb.n_mels) + 2);
    for (int i = 0; i < fb.n_mels + 2; ++i) {
        fb.points_hz[i] = mel_to_hz(lo + (hi - lo) * i / (fb.n_mels + 1));
    }

    const double bin_hz = static_cast<double>(sample_rate) / n_fft;
    for (int m = 0; m < fb.n_mels; ++m) {
        const double left = fb.points_hz[m];
        const double center = fb.points_hz[m + 1];
        const double right = fb.points_hz[m + 2];
        const double rise = center - left;
        const double fall = right - center;
        double* row = fb.weights.data() + static_cast<std::size_t>(m) * fb.n_bins;
        // Only bins strictly inside (left, right) can be non-zero.
        const int first = std::max(0, static_cast<int>(std::floor(left / bin_hz)));
        const int last = std::min(fb.n_bins - 1, static_cast<int>(std::ceil(right / bin_hz)));
        for (int k = first; k <= last; ++k) {
            const double f = k * bin_hz;
            const double up = (f - left) / rise;
            const double down = (right - f) / fall;
            row[k] = std::max(0.0, std::min(up, down));
        }
    }
    return fb;
}

namespace {

std::mutex g_fftw_plan_mutex;

// r2c FFT of a fixed size. Plan creation is serialized; execution on
// separate buffers is thread-safe.
class RealFft {
public:
    explicit RealFft(int n) : n_(n) {
        in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
        out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
        std::lock_guard lock(g_fftw_plan_mutex);
        plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    }
    ~RealFft() {
        {
            std::lock_guard lock(g_fftw_plan_mutex);
            fftw_destroy_plan(plan_);
        }
        fftw_free(in_);
        fftw_free(out_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    double* input() { return in_; }
    void power(std::vector<double>& dst) {
        fftw_execute(plan_);
        dst.resize(static_cast<std::size_t>(n_ / 2 + 1));
        for (int k = 0; k <= n_ / 2; ++k) dst[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }

private:
    int n_;
    double* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

std::vector<double> reflect_pad(const std::vector<double>& x, std::size_t pad) {
    const std::size_t n = x.size();
    std::vector<double> out(n + 2 * pad, 0.0);
    std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(pad));
    if (n < 2) return out;
    for (std::size_t i = 0; i < pad; ++i) {
        // Mirror without repeating the edge sample; fall back to zeros past
        // the signal length.
        const std::size_t src = i + 1;
        if (src < n) {
            out[pad - 1 - i] = x[src];
            out[pad + n + i] = x[n - 2 - i];
        }
    }
    return out;
}

}  // namespace

Spectrogram log_mel_spectrogram(const Waveform& wave, const FrontendParams& params) {
    params.validate(wave.sample_rate);
    if (wave.samples.empty()) throw ConfigError("frontend: empty waveform");
    const int win = params.win_length(wave.sample_rate);
    const int hop = params.hop_length(wave.sample_rate);
    const int n_fft = params.n_fft(wave.sample_rate);
    const auto fb = mel_filterbank(params, wave.sample_rate);

    std::vector<double> signal = params.center ? reflect_pad(wave.samples, static_cast<std::size_t>(win / 2))
                                               : wave.samples;
    if (signal.size() < static_cast<std::size_t>(win)) signal.resize(static_cast<std::size_t>(win), 0.0);
    const int n_frames = 1 + static_cast<int>((signal.size() - win) / hop);

    std::vector<double> window(static_cast<std::size_t>(win));
    for (int n = 0; n < win; ++n) {
        window[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (win - 1));
    }

    Spectrogram spec;
    spec.n_mels = params.n_mels;
    spec.n_frames = n_frames;
    spec.sample_rate = wave.sample_rate;
    spec.params = params;
    spec.values.resize(static_cast<std::size_t>(spec.n_mels) * n_frames);

    RealFft fft(n_fft);
    std::vector<double> power;
    const double log_floor = std::log(kPowerFloor);
    for (int t = 0; t < n_frames; ++t) {
        double* in = fft.input();
        const double* frame = signal.data() + static_cast<std::size_t>(t) * hop;
        for (int n = 0; n < win; ++n) in[n] = frame[n] * window[n];
        std::fill(in + win, in + n_fft, 0.0);
        fft.power(power);
        for (int m = 0; m < fb.n_mels; ++m) {
            const double* row = fb.weights.data() + static_cast<std::size_t>(m) * fb.n_bins;
            double energy = 0.0;
            for (int k = 0; k < fb.n_bins; ++k) energy += row[k] * power[k];
            const double v = energy > kPowerFloor ? std::log(energy) : log_floor;
            spec.values[static_cast<std::size_t>(m) * n_frames + t] = static_cast<float>(v);
        }
    }
    return spec;
}

std::vector<double> resize_bilinear(std::span<const double> grid, int rows, int cols, int out_rows, int out_cols) {
    if (rows < 1 || cols < 1 || out_rows < 1 || out_cols < 1 ||
        grid.size() != static_cast<std::size_t>(rows) * cols) {
        throw ShapeError("resize_bilinear: bad extents");
    }
    auto source_coord = [](int i, int in, int out) {
        if (out == 1 || in == 1) return 0.0;
        return static_cast<double>(i) * (in - 1) / (out - 1);
    };
    std::vector<double> out(static_cast<std::size_t>(out_rows) * out_cols);
    for (int r = 0; r < out_rows; ++r) {
        const double sr = source_coord(r, rows, out_rows);
        const int r0 = std::min(static_cast<int>(std::floor(sr)), rows - 1);
        const int r1 = std::min(r0 + 1, rows - 1);
        const double fr = sr - r0;
        for (int c = 0; c < out_cols; ++c) {
            const double sc = source_coord(c, cols, out_cols);
            const int c0 = std::min(static_cast<int>(std::floor(sc)), cols - 1);
            const int c1 = std::min(c0 + 1, cols - 1);
            const double fc = sc - c0;
            const double top = grid[r0 * cols + c0] * (1.0 - fc) + grid[r0 * cols + c1] * fc;
            const double bottom = grid[r1 * cols + c0] * (1.0 - fc) + grid[r1 * cols + c1] * fc;
            out[static_cast<std::size_t>(r) * out_cols + c] = top * (1.0 - fr) + bottom * fr;
        }
    }
    return out;
}

Tensor fit_to_canvas(std::span<const float> values, int n_mels, int n_frames, int height, int width) {
    if (values.size() != static_cast<std::size_t>(n_mels) * n_frames) {
        throw ShapeError("fit_to_canvas: value count does not match " + std::to_string(n_mels) + "x" +
                         std::to_string(n_frames));
    }
    const std::vector<double> grid(values.begin(), values.end());
    auto resized = resize_bilinear(grid, n_mels, n_frames, height, width);
    double mean = 0.0;
    for (double v : resized) mean += v;
    mean /= static_cast<double>(resized.size());
    double var = 0.0;
    for (double v : resized) var += (v - mean) * (v - mean);
    var /= static_cast<double>(resized.size());
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    std::vector<Scalar> data(resized.size());
    for (std::size_t i = 0; i < resized.size(); ++i) data[i] = static_cast<Scalar>((resized[i] - mean) * inv);
    return Tensor::from({1, height, width}, std::move(data));
}

Tensor fit_to_canvas(const Spectrogram& spec) {
    return fit_to_canvas(spec.values, spec.n_mels, spec.n_frames, spec.params.canvas_height, spec.params.canvas_width);
}

}  // namespace asca::frontend
