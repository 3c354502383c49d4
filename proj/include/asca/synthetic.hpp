#pragma once

#include <cstdint>
#include <filesystem>

#include "asca/frontend.hpp"
#include "asca/rng.hpp"
#include "asca/train.hpp"

namespace asca::synth {

// Small labeled corpus of tone clips. Class c is a stack of partials around
// its own center frequency with a class-specific amplitude rhythm; level,
// phase, detune, onset and background noise vary per clip.
struct CorpusSpec {
    int n_classes = 4;
    int per_class = 8;
    double seconds = 2.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
};

frontend::Waveform synthetic_clip(int cls, const CorpusSpec& spec, Rng& rng);

// In-memory dataset with spectrograms computed by `params`; waveforms are
// kept. Classes are named "class0", "class1", ...
train::Dataset synthetic_dataset(const CorpusSpec& spec, const frontend::FrontendParams& params = {});

// Writes class<c>_<i>.wav files, manifest.csv and classes.txt into `dir` and
// returns the manifest path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, const CorpusSpec& spec);

}  // namespace asca::synth
