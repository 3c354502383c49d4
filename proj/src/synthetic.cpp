#include "asca/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "asca/errors.hpp"

namespace asca::synth {

namespace {

double class_center_hz(int cls, const CorpusSpec& spec) {
    // Log-spaced between 300 Hz and 60% of Nyquist.
    const double lo = 300.0, hi = 0.3 * spec.sample_rate;
    const double t = spec.n_classes > 1 ? static_cast<double>(cls) / (spec.n_classes - 1) : 0.5;
    return lo * std::pow(hi / lo, t);
}

std::string clip_name(int cls, int i) { return "class" + std::to_string(cls) + "_" + std::to_string(i) + ".wav"; }

void validate(const CorpusSpec& spec) {
    if (spec.n_classes < 1 || spec.per_class < 1) throw ConfigError("synthetic corpus: counts must be positive");
    if (!(spec.seconds > 0) || spec.sample_rate < 8000) {
        throw ConfigError("synthetic corpus: need a positive duration and at least 8 kHz");
    }
}

}  // namespace

frontend::Waveform synthetic_clip(int cls, const CorpusSpec& spec, Rng& rng) {
    validate(spec);
    const auto n = static_cast<std::size_t>(spec.seconds * spec.sample_rate);
    const double sr = spec.sample_rate;
    const double center = class_center_hz(cls, spec) * (1.0 + 0.03 * (rng.uniform() - 0.5));
    const double rhythm_hz = 1.5 + 1.5 * cls;  // amplitude modulation rate
    const double level = 0.15 + 0.2 * rng.uniform();
    const double onset = 0.2 * spec.seconds * rng.uniform();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    const double noise_level = 0.01 + 0.02 * rng.uniform();

    frontend::Waveform w;
    w.sample_rate = spec.sample_rate;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        if (t >= onset) {
            const double env = 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * rhythm_hz * (t - onset)));
            for (int h = 1; h <= 3; ++h) {
                const double f = center * (1.0 + 0.5 * (h - 1));
                if (f >= 0.45 * sr) break;
                v += std::sin(2.0 * std::numbers::pi * f * t + h * phase) / h;
            }
            v *= level * env;
        }
        v += noise_level * rng.normal();
        w.samples[i] = std::clamp(v, -1.0, 1.0);
    }
    return w;
}

train::Dataset synthetic_dataset(const CorpusSpec& spec, const frontend::FrontendParams& params) {
    validate(spec);
    train::Dataset data;
    data.frontend = params;
    for (int c = 0; c < spec.n_classes; ++c) data.classes.push_back("class" + std::to_string(c));
    for (int c = 0; c < spec.n_classes; ++c) {
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
            train::Example ex;
            ex.id = clip_name(c, i);
            ex.labels = {c};
            ex.wave = synthetic_clip(c, spec, rng);
            const auto s = frontend::log_mel_spectrogram(ex.wave, params);
            ex.n_mels = s.n_mels;
            ex.n_frames = s.n_frames;
            ex.values = s.values;
            data.examples.push_back(std::move(ex));
        }
    }
    return data;
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, const CorpusSpec& spec) {
    validate(spec);
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
    std::ofstream classes(dir / "classes.txt", std::ios::trunc);
    if (!manifest || !classes) throw IoError("cannot write synthetic corpus into " + dir.string());
    manifest << "path,labels\n";
    for (int c = 0; c < spec.n_classes; ++c) {
        classes << "class" << c << '\n';
        for (int i = 0; i < spec.per_class; ++i) {
            Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)));
            frontend::write_wav_pcm16(dir / clip_name(c, i), synthetic_clip(c, spec, rng));
            manifest << clip_name(c, i) << ",class" << c << '\n';
        }
    }
    return dir / "manifest.csv";
}

}  // namespace asca::synth
