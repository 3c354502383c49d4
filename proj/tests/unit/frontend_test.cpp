#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "asca/frontend.hpp"
#include "asca/rng.hpp"
#include "asca/shard.hpp"
#include "oracles.hpp"

namespace {

namespace fe = asca::frontend;

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back(v >> 8);
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
void put_tag(std::vector<std::uint8_t>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

// Canonical 44-byte-header WAV assembled field by field.
std::vector<std::uint8_t> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                                    std::uint16_t bits, const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> b;
    put_tag(b, "RIFF");
    put_u32(b, static_cast<std::uint32_t>(36 + payload.size()));
    put_tag(b, "WAVE");
    put_tag(b, "fmt ");
    put_u32(b, 16);
    put_u16(b, format);
    put_u16(b, channels);
    put_u32(b, rate);
    put_u32(b, rate * channels * bits / 8);
    put_u16(b, static_cast<std::uint16_t>(channels * bits / 8));
    put_u16(b, bits);
    put_tag(b, "data");
    put_u32(b, static_cast<std::uint32_t>(payload.size()));
    b.insert(b.end(), payload.begin(), payload.end());
    return b;
}

std::vector<std::uint8_t> pcm16(const std::vector<std::int16_t>& samples) {
    std::vector<std::uint8_t> out;
    for (auto s : samples) put_u16(out, static_cast<std::uint16_t>(s));
    return out;
}

std::vector<std::uint8_t> f32(const std::vector<float>& samples) {
    std::vector<std::uint8_t> out(samples.size() * 4);
    std::memcpy(out.data(), samples.data(), out.size());
    return out;
}

fe::Waveform tone(double hz, double seconds, int rate, double amp = 0.5) {
    fe::Waveform w;
    w.sample_rate = rate;
    const auto n = static_cast<std::size_t>(seconds * rate);
    for (std::size_t i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2 * std::numbers::pi * hz * i / rate));
    return w;
}

TEST(Wav, SilenceDecodesToZeros) {
    const auto w = fe::decode_wav_bytes(wav_bytes(1, 1, 32000, 16, pcm16(std::vector<std::int16_t>(32000, 0))));
    EXPECT_EQ(w.sample_rate, 32000);
    ASSERT_EQ(w.samples.size(), 32000u);
    for (double s : w.samples) EXPECT_EQ(s, 0.0);
}

TEST(Wav, Pcm16Scaling) {
    const auto w = fe::decode_wav_bytes(wav_bytes(1, 1, 8000, 16, pcm16({32767, -32768, 16384})));
    EXPECT_EQ(w.samples[0], 32767.0 / 32768.0);
    EXPECT_EQ(w.samples[1], -1.0);
    EXPECT_EQ(w.samples[2], 0.5);
}

TEST(Wav, StereoAveragesToMono) {
    std::vector<float> inter;
    for (int i = 0; i < 100; ++i) {
        inter.push_back(0.5f);
        inter.push_back(-0.5f);
    }
    const auto w = fe::decode_wav_bytes(wav_bytes(3, 2, 16000, 32, f32(inter)));
    ASSERT_EQ(w.samples.size(), 100u);
    for (double s : w.samples) EXPECT_EQ(s, 0.0);
}

TEST(Wav, Float32Mono) {
    const auto w = fe::decode_wav_bytes(wav_bytes(3, 1, 16000, 32, f32({0.25f, -0.75f})));
    EXPECT_EQ(w.samples, (std::vector<double>{0.25, -0.75}));
}

TEST(Wav, MalformedHeadersNameTheField) {
    auto expect_decode_error = [](std::vector<std::uint8_t> bytes, const std::string& needle) {
        try {
            fe::decode_wav_bytes(bytes);
            ADD_FAILURE() << "no error for " << needle;
        } catch (const asca::DecodeError& e) {
            EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
        }
    };
    auto good = wav_bytes(1, 1, 8000, 16, pcm16({1, 2}));
    auto bad_riff = good;
    bad_riff[0] = 'X';
    expect_decode_error(bad_riff, "RIFF");
    auto bad_wave = good;
    bad_wave[8] = 'X';
    expect_decode_error(bad_wave, "WAVE");
    expect_decode_error(wav_bytes(2, 1, 8000, 16, pcm16({1})), "format tag");
    expect_decode_error(wav_bytes(1, 1, 8000, 24, {0, 0, 0}), "bits_per_sample");
    expect_decode_error(wav_bytes(1, 3, 8000, 16, pcm16({1, 2, 3})), "channel");
    expect_decode_error(wav_bytes(1, 1, 0, 16, pcm16({1})), "sample_rate");
    expect_decode_error(std::vector<std::uint8_t>(good.begin(), good.begin() + 36), "data");
}

TEST(Wav, WriterRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "asca_wav_roundtrip.wav";
    fe::Waveform w;
    w.sample_rate = 22050;
    w.samples = {0.0, 0.5, -0.5, 0.25};
    fe::write_wav_pcm16(path, w);
    const auto r = fe::decode_wav(path);
    EXPECT_EQ(r.sample_rate, 22050);
    EXPECT_EQ(r.samples, w.samples);
    std::filesystem::remove(path);
    EXPECT_THROW(fe::decode_wav(path), asca::IoError);
}

TEST(Mel, ClosedFormValues) {
    // 2595 * log10(2); the often-quoted 781.177 is a rounding slip.
    EXPECT_NEAR(fe::hz_to_mel(700.0), 2595.0 * std::log(2.0) / std::log(10.0), 1e-9);
    EXPECT_NEAR(fe::hz_to_mel(700.0), 781.1728, 1e-4);
    EXPECT_EQ(fe::hz_to_mel(0.0), 0.0);
    EXPECT_NEAR(fe::mel_to_hz(fe::hz_to_mel(1234.5)), 1234.5, 1e-9);
}

TEST(Mel, FilterbankMatchesTriangleOracle) {
    for (int rate : {16000, 32000}) {
        for (int n_mels : {40, 128}) {
            fe::FrontendParams p;
            p.n_mels = n_mels;
            const auto fb = fe::mel_filterbank(p, rate);
            EXPECT_EQ(fe::FrontendParams{}.n_fft(rate), rate == 32000 ? 1024 : 512);
            const auto oracle = asca::oracle::triangle_filterbank(n_mels, 20.0, rate / 2.0, rate, p.n_fft(rate));
            ASSERT_EQ(fb.weights.size(), oracle.size());
            double worst = 0;
            for (std::size_t i = 0; i < oracle.size(); ++i) worst = std::max(worst, std::abs(fb.weights[i] - oracle[i]));
            EXPECT_LE(worst, 1e-10) << rate << " Hz, " << n_mels << " mels";
        }
    }
}

TEST(Mel, NonnegativeCoveredAndSinglePeaked) {
    fe::FrontendParams p;
    const int rate = 32000;
    const auto fb = fe::mel_filterbank(p, rate);
    const double bin_hz = static_cast<double>(rate) / p.n_fft(rate);
    for (int m = 0; m < fb.n_mels; ++m) {
        double peak = -1;
        int peaks = 0;
        for (int k = 0; k < fb.n_bins; ++k) {
            EXPECT_GE(fb.weight(m, k), 0.0);
            if (fb.weight(m, k) > peak) {
                peak = fb.weight(m, k);
                peaks = 1;
            } else if (fb.weight(m, k) == peak) {
                ++peaks;
            }
        }
        // Filters narrower than a bin may miss every bin entirely.
        if (peak > 0) EXPECT_EQ(peaks, 1) << "filter " << m;
    }
    for (int k = 0; k < fb.n_bins; ++k) {
        const double f = k * bin_hz;
        if (f < fb.center_hz(0) || f > fb.center_hz(fb.n_mels - 1)) continue;
        double total = 0;
        for (int m = 0; m < fb.n_mels; ++m) total += fb.weight(m, k);
        EXPECT_GT(total, 0.0) << "bin " << k;
    }
}

TEST(Mel, FmaxAboveNyquistIsConfigError) {
    fe::FrontendParams p;
    p.fmax = 9000;
    EXPECT_THROW(fe::mel_filterbank(p, 16000), asca::ConfigError);
}

TEST(Spectrogram, TenSecondsAt32kHzGives998Frames) {
    fe::Waveform w;
    w.sample_rate = 32000;
    w.samples.assign(320000, 0.0);
    fe::FrontendParams p;
    EXPECT_EQ(p.win_length(32000), 800);
    EXPECT_EQ(p.hop_length(32000), 320);
    const auto s = fe::log_mel_spectrogram(w, p);
    EXPECT_EQ(s.n_frames, 998);
    EXPECT_EQ(s.n_mels, 128);
    for (float v : s.values) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-10)));
}

TEST(Spectrogram, ToneArgmaxAtNearestCenter) {
    fe::FrontendParams p;
    const auto s = fe::log_mel_spectrogram(tone(1000.0, 1.0, 32000), p);
    const auto fb = fe::mel_filterbank(p, 32000);
    int nearest = 0;
    for (int m = 1; m < fb.n_mels; ++m) {
        if (std::abs(fb.center_hz(m) - 1000.0) < std::abs(fb.center_hz(nearest) - 1000.0)) nearest = m;
    }
    const int frame = s.n_frames / 2;
    int best = 0;
    for (int m = 1; m < s.n_mels; ++m) {
        if (s.at(m, frame) > s.at(best, frame)) best = m;
    }
    EXPECT_EQ(best, nearest);
}

TEST(Spectrogram, FiniteAndMonotoneInGain) {
    asca::Rng rng(5);
    fe::Waveform w;
    w.sample_rate = 16000;
    for (int i = 0; i < 8000; ++i) w.samples.push_back(rng.uniform() - 0.5);
    auto louder = w;
    for (auto& v : louder.samples) v *= 1.5;
    fe::FrontendParams p;
    const auto a = fe::log_mel_spectrogram(w, p), b = fe::log_mel_spectrogram(louder, p);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        EXPECT_TRUE(std::isfinite(a.values[i]));
        EXPECT_GE(b.values[i], a.values[i]);
    }
}

TEST(Spectrogram, CenteredFramingAddsAFrame) {
    fe::FrontendParams p;
    p.center = true;
    fe::Waveform w;
    w.sample_rate = 32000;
    w.samples.assign(320000, 0.0);
    EXPECT_EQ(fe::log_mel_spectrogram(w, p).n_frames, 1001);
}

TEST(Canvas, ResizeKeepsCorners) {
    const std::vector<double> grid = {1, 2, 3, 4, 5, 6};
    const auto out = fe::resize_bilinear(grid, 2, 3, 5, 7);
    EXPECT_EQ(out[0], 1);
    EXPECT_EQ(out[6], 3);
    EXPECT_EQ(out[28], 4);
    EXPECT_EQ(out[34], 6);
}

TEST(Canvas, StandardizedAndSized) {
    fe::FrontendParams p;
    const auto s = fe::log_mel_spectrogram(tone(440.0, 10.0, 32000), p);
    ASSERT_EQ(s.n_frames, 998);
    const auto t = fe::fit_to_canvas(s);
    EXPECT_EQ(t.shape(), (asca::Shape{1, 224, 224}));
    double mean = 0, sq = 0;
    for (auto v : t.values()) mean += v;
    mean /= t.numel();
    for (auto v : t.values()) sq += (v - mean) * (v - mean);
    EXPECT_LE(std::abs(mean), 1e-5);
    EXPECT_NEAR(std::sqrt(sq / t.numel()), 1.0, 1e-3);
}

TEST(Canvas, ConstantInputBecomesZeros) {
    const std::vector<float> v(224 * 224, 3.5f);
    const auto t = fe::fit_to_canvas(v, 224, 224);
    for (auto x : t.values()) EXPECT_EQ(x, 0);
}

TEST(Shard, RoundTripAndRejectsCorruption) {
    fe::ShardRecord a{2, 3, {1, 2, 3, 4, 5, 6}, {0, 4}};
    fe::ShardRecord b{1, 1, {-7.5f}, {}};
    std::stringstream ss;
    fe::write_shard_record(ss, a);
    fe::write_shard_record(ss, b);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 4), "ASCF");
    auto r1 = fe::read_shard_record(ss);
    auto r2 = fe::read_shard_record(ss);
    ASSERT_TRUE(r1 && r2);
    EXPECT_EQ(r1->values, a.values);
    EXPECT_EQ(r1->labels, a.labels);
    EXPECT_EQ(r2->values, b.values);
    EXPECT_FALSE(fe::read_shard_record(ss));

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    fe::read_shard_record(truncated);
    EXPECT_THROW(fe::read_shard_record(truncated), asca::DecodeError);
    std::stringstream bad_magic("XSCF" + bytes.substr(4));
    EXPECT_THROW(fe::read_shard_record(bad_magic), asca::DecodeError);
}

TEST(Shard, LittleEndianLayout) {
    std::stringstream ss;
    fe::write_shard_record(ss, {1, 2, {1.0f, -2.0f}, {3}});
    const std::string s = ss.str();
    ASSERT_EQ(s.size(), 4u + 4 + 4 + 4 + 8 + 4 + 4);
    auto u32 = [&](std::size_t at) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[at + i]);
        return v;
    };
    EXPECT_EQ(u32(4), 1u);
    EXPECT_EQ(u32(8), 1u);
    EXPECT_EQ(u32(12), 2u);
    EXPECT_EQ(u32(16), 0x3f800000u);
    EXPECT_EQ(u32(20), 0xc0000000u);
    EXPECT_EQ(u32(24), 1u);
    EXPECT_EQ(u32(28), 3u);
}

}  // namespace
