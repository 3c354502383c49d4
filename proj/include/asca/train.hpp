#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "asca/augment.hpp"
#include "asca/checkpoint.hpp"
#include "asca/frontend.hpp"
#include "asca/metrics.hpp"
#include "asca/model.hpp"
#include "asca/rng.hpp"

namespace asca::train {

struct TrainConfig {
    int batch_size = 12;
    double lr0 = 5e-5;
    double lr_min = 0.0;
    int epochs = 30;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double drop_path_max = 0.2;   // deepest block; earlier blocks ramp linearly from 0
    double weight_noise_std = 0.0;  // multiplied by the current learning rate
    std::uint64_t seed = 0;
    double val_fraction = 0.1;    // 0: evaluate on the training split
    std::int64_t max_steps = 0;   // 0: no cap

    void validate() const;
};

// ---- loss -----------------------------------------------------------------

// Mean over all B x K entries of max(z, 0) - z t + log(1 + exp(-|z|)).
// Throws ShapeError on mismatched shapes and ConfigError for targets outside
// [0, 1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// ---- optimizer ------------------------------------------------------------

struct OptimizerState {
    std::vector<std::vector<Scalar>> m;
    std::vector<std::vector<Scalar>> v;
    std::int64_t step = 0;
};

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One update of a single parameter; `t` is the 1-based step. With decay the
// parameter first shrinks by (1 - lr * weight_decay), then takes the Adam
// step. weight_decay = 0 is exactly Adam.
void adamw_update(std::span<Scalar> param, std::span<const Scalar> grad, std::span<Scalar> m, std::span<Scalar> v,
                  std::int64_t t, double lr, const AdamWParams& p, bool decay);

// Updates every trainable parameter from its gradient. Parameters flagged
// `decay = false` (norm affines, biases, bias tables) skip weight decay.
// Parameters without a gradient are left untouched.
void adamw_step(std::vector<model::Parameter>& params, OptimizerState& state, double lr, const AdamWParams& p);

// ---- schedule -------------------------------------------------------------

// lr_min + (lr0 - lr_min) (1 + cos(pi step / total_steps)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min);

// ---- data -----------------------------------------------------------------

struct Example {
    std::string id;
    std::vector<int> labels;  // class indices
    int n_mels = 0;
    int n_frames = 0;
    std::vector<float> values;  // prepared log-mel spectrogram
    frontend::Waveform wave;    // optional; needed only for background noise
};

struct Dataset {
    std::vector<std::string> classes;
    std::vector<Example> examples;
    frontend::FrontendParams frontend;

    std::size_t size() const { return examples.size(); }
    int num_classes() const { return static_cast<int>(classes.size()); }
    // Throws ConfigError on out-of-range labels or inconsistent examples.
    void validate() const;
};

// Draws `length` indices: a class uniformly, then one of its examples
// uniformly (with replacement). An example with several labels belongs to
// each of them. Throws ConfigError when a class has no example.
std::vector<std::size_t> balanced_sampler(const std::vector<std::vector<int>>& labels, int num_classes,
                                          std::size_t length, Rng& rng);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

// Stratified by each example's first label: round(fraction * n_c) of every
// class goes to validation while at least one example stays in training.
Split stratified_split(const std::vector<std::vector<int>>& labels, int num_classes, double fraction,
                       std::uint64_t seed);

// ---- loop -----------------------------------------------------------------

struct StepLog {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    double loss = 0;
};

struct EpochLog {
    int epoch = 0;
    std::int64_t step = 0;  // steps completed so far
    double map = 0;
    double accuracy = 0;
    double mean_loss = 0;
};

struct TrainOptions {
    std::filesystem::path output_dir;  // empty: no files are written
    model::Metadata metadata;          // stored in every checkpoint
    std::ostream* log = nullptr;       // JSON lines; in addition to output_dir/metrics.jsonl
    // Called after every epoch evaluation; returning false stops training.
    std::function<bool(const EpochLog&)> on_epoch;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;
    double best_map = -1;
    int best_epoch = -1;
    std::int64_t total_steps = 0;  // length of the cosine schedule
};

// Per-step batch count for a split of n examples: full batches, plus the
// remainder when it holds at least two examples.
std::int64_t steps_per_epoch(std::size_t n, int batch_size);

// Canvas of one example after per-example augmentation (noise on the
// waveform when available, then spectrogram masking), [1 x H x W].
Tensor example_canvas(const Dataset& data, std::size_t index, const augment::AugmentConfig& aug,
                      const std::vector<frontend::Waveform>& noise, Rng& rng);

// Sigmoid scores and labels for `indices` in eval mode.
metrics::EvalResult evaluate_model(model::AscaModel& model, const Dataset& data, std::span<const std::size_t> indices,
                                   int batch_size, metrics::Matrix* scores_out = nullptr);

// Runs the epoch loop. Throws NumericError naming the batch when the loss is
// not finite.
TrainResult train(model::AscaModel& model, const Dataset& data, const TrainConfig& cfg,
                  const augment::AugmentConfig& aug, const TrainOptions& options = {});

// Keeps freed buffers in the heap instead of returning them to the OS, which
// avoids page-faulting every activation on every step. Process-wide.
void tune_allocator();

}  // namespace asca::train
