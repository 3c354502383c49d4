#include "asca/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "asca/autograd.hpp"
#include "asca/errors.hpp"
#include "asca/log.hpp"

namespace asca::train {

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("train: lr0 must be > 0");
    if (lr_min < 0 || lr_min > lr0) throw ConfigError("train: lr_min must lie in [0, lr0]");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be > 0");
    if (drop_path_max < 0 || drop_path_max >= 1) throw ConfigError("train: stochastic depth p must lie in [0, 1)");
    if (weight_noise_std < 0) throw ConfigError("train: weight_noise_std must be >= 0");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("train: val_fraction must lie in [0, 1)");
    if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError("bce_with_logits: logits " + to_string(logits.shape()) + " vs targets " +
                         to_string(targets.shape()));
    }
    const auto& z = logits.values();
    const auto& t = targets.values();
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] >= 0 && t[i] <= 1)) {
            throw ConfigError("bce_with_logits: target " + std::to_string(t[i]) + " at index " + std::to_string(i) +
                              " outside [0, 1]");
        }
    }
    double acc = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        acc += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    const double n = static_cast<double>(z.size());
    Buffer out{static_cast<Scalar>(acc / n)};
    return detail::finish("bce_with_logits", {1}, std::move(out), {&logits}, [logits, targets, n](std::span<const Scalar> g) {
        auto gz = detail::grad_buffer(*logits.impl());
        const auto& z = logits.values();
        const auto& t = targets.values();
        const double scale = g[0] / n;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double zi = z[i];
            const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
            gz[i] += static_cast<Scalar>((s - t[i]) * scale);
        }
    });
}

void adamw_update(std::span<Scalar> param, std::span<const Scalar> grad, std::span<Scalar> m, std::span<Scalar> v,
                  std::int64_t t, double lr, const AdamWParams& p, bool decay) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw ShapeError("adamw_update: parameter, gradient and moment sizes differ");
    }
    if (t < 1) throw ContractError("adamw_update: step must be >= 1");
    const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
    const double shrink = decay && p.weight_decay != 0.0 ? 1.0 - lr * p.weight_decay : 1.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        const double mi = p.beta1 * m[i] + (1.0 - p.beta1) * g;
        const double vi = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
        m[i] = static_cast<Scalar>(mi);
        v[i] = static_cast<Scalar>(vi);
        double w = param[i];
        if (shrink != 1.0) w *= shrink;
        w -= lr * (mi / c1) / (std::sqrt(vi / c2) + p.eps);
        param[i] = static_cast<Scalar>(w);
    }
}

void adamw_step(std::vector<model::Parameter>& params, OptimizerState& state, double lr, const AdamWParams& p) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) continue;
            state.m[i].assign(static_cast<std::size_t>(params[i].value.numel()), Scalar(0));
            state.v[i].assign(static_cast<std::size_t>(params[i].value.numel()), Scalar(0));
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adamw_step: optimizer state does not match parameters");
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& prm = params[i];
        if (!prm.trainable || !prm.value.has_grad()) continue;
        adamw_update(prm.value.data(), prm.value.grad(), state.m[i], state.v[i], state.step, lr, p, prm.decay);
    }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min) {
    if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                          "]");
    }
    if (step == 0) return lr0;
    if (step == total_steps) return lr_min;
    const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

void Dataset::validate() const {
    if (classes.empty()) throw ConfigError("dataset: no classes");
    if (examples.empty()) throw ConfigError("dataset: no examples");
    for (const auto& ex : examples) {
        for (int c : ex.labels) {
            if (c < 0 || c >= num_classes()) {
                throw ConfigError("dataset: example '" + ex.id + "' has label " + std::to_string(c) + " outside [0, " +
                                  std::to_string(num_classes()) + ")");
            }
        }
        if (ex.n_mels < 1 || ex.n_frames < 1 ||
            ex.values.size() != static_cast<std::size_t>(ex.n_mels) * static_cast<std::size_t>(ex.n_frames)) {
            throw ConfigError("dataset: example '" + ex.id + "' has an inconsistent spectrogram");
        }
    }
}

std::vector<std::size_t> balanced_sampler(const std::vector<std::vector<int>>& labels, int num_classes,
                                          std::size_t length, Rng& rng) {
    if (num_classes < 1) throw ConfigError("balanced_sampler: need at least one class");
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int c : labels[i]) {
            if (c < 0 || c >= num_classes) throw ConfigError("balanced_sampler: label out of range");
            members[c].push_back(i);
        }
    }
    for (int c = 0; c < num_classes; ++c) {
        if (members[c].empty()) throw ConfigError("balanced_sampler: class " + std::to_string(c) + " has no examples");
    }
    std::vector<std::size_t> out(length);
    for (auto& idx : out) {
        const auto& pool = members[static_cast<std::size_t>(rng.uniform_int(0, num_classes - 1))];
        idx = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    }
    return out;
}

Split stratified_split(const std::vector<std::vector<int>>& labels, int num_classes, double fraction,
                       std::uint64_t seed) {
    if (fraction < 0 || fraction >= 1) throw ConfigError("stratified_split: fraction must lie in [0, 1)");
    // Stratum num_classes collects unlabeled examples.
    std::vector<std::vector<std::size_t>> strata(static_cast<std::size_t>(num_classes) + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        strata[labels[i].empty() ? num_classes : labels[i].front()].push_back(i);
    }
    Split split;
    for (std::size_t c = 0; c < strata.size(); ++c) {
        auto& group = strata[c];
        if (group.empty()) continue;
        Rng rng(derive_seed(seed, 0x73706c6974ULL, c));
        std::shuffle(group.begin(), group.end(), rng.engine());
        auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(group.size())));
        n_val = std::min(n_val, group.size() - 1);
        split.val.insert(split.val.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_val));
        split.train.insert(split.train.end(), group.begin() + static_cast<std::ptrdiff_t>(n_val), group.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    return split;
}

std::int64_t steps_per_epoch(std::size_t n, int batch_size) {
    const auto full = static_cast<std::int64_t>(n) / batch_size;
    const auto rest = static_cast<std::int64_t>(n) % batch_size;
    return full + (rest >= 2 ? 1 : 0);
}

Tensor example_canvas(const Dataset& data, std::size_t index, const augment::AugmentConfig& aug,
                      const std::vector<frontend::Waveform>& noise, Rng& rng) {
    const auto& ex = data.examples.at(index);
    const int h = data.frontend.canvas_height, w = data.frontend.canvas_width;
    Tensor canvas;
    const bool noisy = aug.noise && aug.noise_gain > 0 && !noise.empty() && !ex.wave.samples.empty() &&
                       rng.bernoulli(aug.noise_probability);
    if (noisy) {
        const auto& clip = noise[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(noise.size()) - 1))];
        const auto wave = augment::add_background_noise(ex.wave, clip, aug.noise_gain, rng);
        auto params = data.frontend;
        const auto spec = frontend::log_mel_spectrogram(wave, params);
        canvas = frontend::fit_to_canvas(spec.values, spec.n_mels, spec.n_frames, h, w);
    } else {
        canvas = frontend::fit_to_canvas(ex.values, ex.n_mels, ex.n_frames, h, w);
    }
    if (aug.masking) canvas = augment::spec_mask(canvas, aug, rng);
    return canvas;
}

namespace {

using Json = nlohmann::ordered_json;

Tensor stack_batch(const std::vector<Tensor>& items) {
    const auto& shape = items.front().shape();
    Shape out_shape{static_cast<std::int64_t>(items.size())};
    out_shape.insert(out_shape.end(), shape.begin(), shape.end());
    std::vector<Scalar> data;
    data.reserve(static_cast<std::size_t>(numel(out_shape)));
    for (const auto& t : items) data.insert(data.end(), t.values().begin(), t.values().end());
    return Tensor::from(std::move(out_shape), std::move(data));
}

std::vector<Scalar> multi_hot(const std::vector<int>& labels, int k) {
    std::vector<Scalar> y(static_cast<std::size_t>(k), Scalar(0));
    for (int c : labels) y[c] = Scalar(1);
    return y;
}

std::vector<frontend::Waveform> load_noise(const augment::AugmentConfig& aug) {
    std::vector<frontend::Waveform> clips;
    if (!aug.noise || aug.noise_dir.empty()) return clips;
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(aug.noise_dir, ec)) {
        if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
    }
    if (ec) throw IoError("cannot read noise directory " + aug.noise_dir + ": " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) clips.push_back(frontend::decode_wav(f));
    if (clips.empty()) log_warning("noise directory " + aug.noise_dir + " holds no .wav files; noise disabled");
    return clips;
}

class LogWriter {
public:
    LogWriter(const TrainOptions& options) : extra_(options.log) {
        if (!options.output_dir.empty()) {
            file_.open(options.output_dir / "metrics.jsonl", std::ios::trunc);
            if (!file_) throw IoError("cannot write " + (options.output_dir / "metrics.jsonl").string());
        }
    }

    void write(const Json& j) {
        const auto line = j.dump();
        if (file_.is_open()) file_ << line << '\n' << std::flush;
        if (extra_ != nullptr) *extra_ << line << '\n';
    }

private:
    std::ofstream file_;
    std::ostream* extra_;
};

// Tags separating the random streams derived from the run seed.
constexpr std::uint64_t kSamplerStream = 0x01;
constexpr std::uint64_t kExampleStream = 0x02;
constexpr std::uint64_t kBatchStream = 0x03;
constexpr std::uint64_t kDepthStream = 0x04;
constexpr std::uint64_t kNoiseStream = 0x05;

}  // namespace

metrics::EvalResult evaluate_model(model::AscaModel& model, const Dataset& data, std::span<const std::size_t> indices,
                                   int batch_size, metrics::Matrix* scores_out) {
    if (indices.empty()) throw EvaluationError("evaluate: no examples");
    const int k = data.num_classes();
    if (model.spec().num_classes != k) {
        throw ConfigError("evaluate: model has " + std::to_string(model.spec().num_classes) + " classes, data has " +
                          std::to_string(k));
    }
    metrics::Matrix scores(static_cast<std::int64_t>(indices.size()), k);
    metrics::Matrix labels(static_cast<std::int64_t>(indices.size()), k);
    const auto identity = augment::AugmentConfig::identity();
    const std::vector<frontend::Waveform> no_noise;
    Rng unused(0);
    model::ForwardOptions opts;
    opts.mode = ops::Mode::kEval;
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto end = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<Tensor> items;
        for (auto i = start; i < end; ++i) items.push_back(example_canvas(data, indices[i], identity, no_noise, unused));
        const auto logits = model.forward(stack_batch(items), opts);
        const auto& z = logits.values();
        for (auto i = start; i < end; ++i) {
            const auto row = static_cast<std::int64_t>(i);
            for (int c = 0; c < k; ++c) {
                const double v = z[(i - start) * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
                scores(row, c) = 1.0 / (1.0 + std::exp(-v));
            }
            for (int c : data.examples[indices[i]].labels) labels(row, c) = 1.0;
        }
    }
    if (scores_out != nullptr) *scores_out = scores;
    return metrics::evaluate(scores, labels);
}

TrainResult train(model::AscaModel& model, const Dataset& data, const TrainConfig& cfg,
                  const augment::AugmentConfig& aug, const TrainOptions& options) {
    cfg.validate();
    data.validate();
    aug.validate(data.frontend.canvas_height, data.frontend.canvas_width);
    if (model.spec().num_classes != data.num_classes()) {
        throw ConfigError("train: model has " + std::to_string(model.spec().num_classes) + " classes, data has " +
                          std::to_string(data.num_classes()));
    }
    if (!options.output_dir.empty()) std::filesystem::create_directories(options.output_dir);

    std::vector<std::vector<int>> all_labels;
    for (const auto& ex : data.examples) all_labels.push_back(ex.labels);
    const auto split = stratified_split(all_labels, data.num_classes(), cfg.val_fraction, cfg.seed);
    std::vector<std::vector<int>> train_labels;
    for (auto i : split.train) train_labels.push_back(all_labels[i]);
    const auto& eval_indices = split.val.empty() ? split.train : split.val;

    const auto per_epoch = steps_per_epoch(split.train.size(), cfg.batch_size);
    if (per_epoch < 1) throw ConfigError("train: training split smaller than two examples");
    TrainResult result;
    result.total_steps = per_epoch * cfg.epochs;
    const auto schedule_end = std::max<std::int64_t>(result.total_steps - 1, 1);

    const auto noise = load_noise(aug);
    if (aug.noise && !noise.empty() &&
        std::none_of(data.examples.begin(), data.examples.end(), [](const Example& e) { return !e.wave.samples.empty(); })) {
        log_warning("background noise requested but the dataset carries no waveforms; noise disabled");
    }

    LogWriter log(options);
    auto& params = model.weights().entries();
    OptimizerState opt;
    const AdamWParams adam{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    const int k = data.num_classes();

    std::int64_t step = 0;
    double best_accuracy = -1;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        Rng sampler_rng(derive_seed(cfg.seed, kSamplerStream, static_cast<std::uint64_t>(epoch)));
        const auto order = balanced_sampler(train_labels, k, split.train.size(), sampler_rng);
        double loss_sum = 0;
        int loss_count = 0;
        for (std::int64_t b = 0; b < per_epoch; ++b) {
            if (cfg.max_steps > 0 && step >= cfg.max_steps) {
                stop = true;
                break;
            }
            const auto first = static_cast<std::size_t>(b * cfg.batch_size);
            const auto last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
            // A single leftover example would make batch statistics degenerate.
            const auto end = order.size() - last == 1 ? order.size() : last;

            std::vector<Tensor> items;
            std::vector<Scalar> targets;
            std::vector<std::size_t> batch_ids;
            for (auto slot = first; slot < end; ++slot) {
                const auto idx = split.train[order[slot]];
                batch_ids.push_back(idx);
                Rng ex_rng(derive_seed(cfg.seed ^ kExampleStream, static_cast<std::uint64_t>(epoch), slot));
                items.push_back(example_canvas(data, idx, aug, noise, ex_rng));
                const auto y = multi_hot(data.examples[idx].labels, k);
                targets.insert(targets.end(), y.begin(), y.end());
            }
            Tensor x = stack_batch(items);
            const auto bsz = static_cast<std::int64_t>(items.size());
            if (aug.mixup) {
                Rng batch_rng(derive_seed(cfg.seed, kBatchStream, static_cast<std::uint64_t>(step)));
                const auto lambda = static_cast<Scalar>(batch_rng.beta(aug.mixup_alpha, aug.mixup_alpha));
                std::vector<std::size_t> perm(items.size());
                std::iota(perm.begin(), perm.end(), std::size_t{0});
                std::shuffle(perm.begin(), perm.end(), batch_rng.engine());
                std::vector<Tensor> shuffled;
                std::vector<Scalar> shuffled_targets;
                for (auto p : perm) {
                    shuffled.push_back(items[p]);
                    shuffled_targets.insert(shuffled_targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(p * k),
                                            targets.begin() + static_cast<std::ptrdiff_t>((p + 1) * k));
                }
                auto mixed = augment::mixup(x, stack_batch(shuffled), targets, shuffled_targets, lambda);
                x = std::move(mixed.x);
                targets = std::move(mixed.y);
            }
            const Tensor y = Tensor::from({bsz, k}, std::move(targets));

            const double lr = cosine_lr(step, schedule_end, cfg.lr0, cfg.lr_min);
            std::vector<std::vector<Scalar>> clean;
            if (cfg.weight_noise_std > 0) {
                Rng noise_rng(derive_seed(cfg.seed, kNoiseStream, static_cast<std::uint64_t>(step)));
                const double stddev = cfg.weight_noise_std * lr;
                for (auto& p : params) {
                    if (!p.trainable || !p.decay) {
                        clean.emplace_back();
                        continue;
                    }
                    clean.emplace_back(p.value.values().begin(), p.value.values().end());
                    for (auto& v : p.value.data()) v += static_cast<Scalar>(noise_rng.normal(0.0, stddev));
                }
            }

            Rng depth_rng(derive_seed(cfg.seed, kDepthStream, static_cast<std::uint64_t>(step)));
            model::ForwardOptions fopts;
            fopts.mode = ops::Mode::kTrain;
            fopts.rng = &depth_rng;
            fopts.drop_path_max = cfg.drop_path_max;
            for (auto& p : params) p.value.zero_grad();
            double loss_value = 0;
            {
                Tape tape;
                TapeGuard guard(tape);
                try {
                    const auto loss = bce_with_logits(model.forward(x, fopts), y);
                    loss_value = loss.item();
                    tape.backward(loss);
                } catch (const NumericError& e) {
                    std::ostringstream ids;
                    for (std::size_t i = 0; i < batch_ids.size(); ++i) {
                        ids << (i ? " " : "") << data.examples[batch_ids[i]].id;
                    }
                    const std::string what = "non-finite loss at step " + std::to_string(step) + " (epoch " +
                                             std::to_string(epoch) + ", batch " + std::to_string(b) +
                                             "; examples: " + ids.str() + "): " + e.what();
                    if (!options.output_dir.empty()) {
                        std::ofstream dump(options.output_dir / "nonfinite_batch.txt");
                        dump << what << '\n';
                    }
                    throw NumericError(what);
                }
            }
            if (!clean.empty()) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    if (clean[i].empty()) continue;
                    std::copy(clean[i].begin(), clean[i].end(), params[i].value.data().begin());
                }
            }
            adamw_step(params, opt, lr, adam);
            for (auto& p : params) p.value.zero_grad();

            result.steps.push_back({step, epoch, lr, loss_value});
            log.write(Json{{"kind", "step"}, {"step", step}, {"epoch", epoch}, {"lr", lr}, {"loss", loss_value}});
            loss_sum += loss_value;
            ++loss_count;
            ++step;
            if (end == order.size()) break;
        }
        if (loss_count == 0) break;

        const auto eval = evaluate_model(model, data, eval_indices, cfg.batch_size);
        EpochLog ep{epoch, step, eval.map, eval.top1_accuracy, loss_sum / loss_count};
        result.epochs.push_back(ep);
        log.write(Json{{"kind", "epoch"},
                       {"epoch", epoch},
                       {"step", step},
                       {"mAP", eval.map},
                       {"acc", eval.top1_accuracy},
                       {"loss", ep.mean_loss}});
        // Ties on mAP go to the more accurate epoch.
        if (eval.map > result.best_map || (eval.map == result.best_map && eval.top1_accuracy > best_accuracy)) {
            result.best_map = eval.map;
            best_accuracy = eval.top1_accuracy;
            result.best_epoch = epoch;
            if (!options.output_dir.empty()) {
                model::save_checkpoint(options.output_dir / "best.ckpt", model, options.metadata);
            }
        }
        if (options.on_epoch && !options.on_epoch(ep)) stop = true;
    }
    if (!options.output_dir.empty()) model::save_checkpoint(options.output_dir / "last.ckpt", model, options.metadata);
    return result;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace asca::train
