#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "asca/checkpoint.hpp"
#include "asca/cli.hpp"
#include "asca/errors.hpp"
#include "asca/log.hpp"
#include "asca/shard.hpp"

namespace asca::cli {

namespace {

using Json = nlohmann::ordered_json;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open audio file " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

// The frontend.* lines of a resolved config; part of the shard key and the
// checkpoint metadata.
std::string frontend_text(const frontend::FrontendParams& params) {
    RunConfig cfg;
    cfg.frontend = params;
    std::string out;
    std::istringstream in(cfg.to_text());
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("frontend.", 0) == 0) out += line + "\n";
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
                return;
            }
        }
    };
    const auto count = static_cast<std::size_t>(std::max(1, threads));
    if (count == 1 || n < 2) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(count, n); ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
}

std::filesystem::path audio_root_of(const RunConfig& cfg) {
    if (!cfg.audio_root.empty()) return cfg.audio_root;
    return std::filesystem::path(cfg.manifest).parent_path();
}

std::filesystem::path cache_dir_of(const RunConfig& cfg) {
    if (!cfg.cache_dir.empty()) return cfg.cache_dir;
    if (!cfg.output_dir.empty()) return std::filesystem::path(cfg.output_dir) / "cache";
    return {};
}

void require_manifest(const RunConfig& cfg) {
    if (cfg.manifest.empty()) throw ConfigError("no manifest given (--manifest or paths.manifest)");
    if (!std::filesystem::exists(cfg.manifest)) throw IoError("manifest not found: " + cfg.manifest);
}

model::Metadata checkpoint_metadata(const std::vector<std::string>& classes, const frontend::FrontendParams& params) {
    model::Metadata meta;
    std::string joined;
    for (const auto& c : classes) joined += (joined.empty() ? "" : " ") + c;
    meta["classes"] = joined;
    std::istringstream in(frontend_text(params));
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find(" = ");
        meta[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return meta;
}

struct LoadedCheckpoint {
    model::Checkpoint ck;
    std::vector<std::string> classes;
    frontend::FrontendParams frontend;
};

LoadedCheckpoint open_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    LoadedCheckpoint out;
    out.ck = model::load_checkpoint(path);
    RunConfig cfg;
    for (const auto& [k, v] : out.ck.metadata) {
        if (k.rfind("frontend.", 0) == 0) cfg.set(k, v);
    }
    out.frontend = cfg.frontend;
    if (auto it = out.ck.metadata.find("classes"); it != out.ck.metadata.end()) {
        std::istringstream in(it->second);
        for (std::string c; in >> c;) out.classes.push_back(c);
    }
    if (static_cast<int>(out.classes.size()) != out.ck.model->spec().num_classes) {
        out.classes.clear();
        for (int c = 0; c < out.ck.model->spec().num_classes; ++c) out.classes.push_back(std::to_string(c));
    }
    return out;
}

}  // namespace

std::uint64_t shard_key(const std::vector<std::uint8_t>& audio, const frontend::FrontendParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const std::uint8_t* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    feed(audio.data(), audio.size());
    const auto text = frontend_text(params);
    feed(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
    return h;
}

train::Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& audio_root,
                            const std::filesystem::path& cache_dir, const frontend::FrontendParams& params,
                            int threads, bool keep_waves) {
    if (!cache_dir.empty()) std::filesystem::create_directories(cache_dir);
    train::Dataset data;
    data.classes = manifest.classes;
    data.frontend = params;
    data.examples.resize(manifest.rows.size());
    parallel_for(manifest.rows.size(), resolve_threads(threads), [&](std::size_t i) {
        const auto& row = manifest.rows[i];
        const auto path = audio_root / row.path;
        const auto bytes = read_bytes(path);
        auto& ex = data.examples[i];
        ex.id = row.path;
        ex.labels = row.labels;
        std::filesystem::path shard;
        if (!cache_dir.empty()) shard = cache_dir / (hex64(shard_key(bytes, params)) + ".ascf");
        frontend::Waveform wave;
        bool decoded = false;
        if (!shard.empty() && std::filesystem::exists(shard)) {
            auto recs = frontend::read_shard_file(shard);
            if (recs.size() != 1 || static_cast<int>(recs[0].n_mels) != params.n_mels) {
                throw DecodeError("cached shard " + shard.string() + " does not match " + row.path);
            }
            ex.n_mels = static_cast<int>(recs[0].n_mels);
            ex.n_frames = static_cast<int>(recs[0].n_frames);
            ex.values = std::move(recs[0].values);
        } else {
            try {
                wave = frontend::decode_wav_bytes(bytes);
            } catch (const DecodeError& e) {
                throw DecodeError(path.string() + ": " + e.what());
            }
            decoded = true;
            const auto spec = frontend::log_mel_spectrogram(wave, params);
            ex.n_mels = spec.n_mels;
            ex.n_frames = spec.n_frames;
            ex.values = spec.values;
            if (!shard.empty()) {
                frontend::ShardRecord rec;
                rec.n_mels = static_cast<std::uint32_t>(spec.n_mels);
                rec.n_frames = static_cast<std::uint32_t>(spec.n_frames);
                rec.values = spec.values;
                auto tmp = shard;
                tmp += ".tmp" + std::to_string(i);
                frontend::write_shard_file(tmp, {rec});
                std::filesystem::rename(tmp, shard);
            }
        }
        if (keep_waves) {
            if (!decoded) wave = frontend::decode_wav_bytes(bytes);
            ex.wave = std::move(wave);
        }
    });
    return data;
}

PrepareSummary run_prepare(const RunConfig& cfg) {
    require_manifest(cfg);
    if (cfg.output_dir.empty()) throw ConfigError("prepare needs an output directory (--out or paths.output_dir)");
    const auto manifest = load_manifest(cfg.manifest);
    const auto cache = cache_dir_of(cfg);
    std::filesystem::create_directories(cache);
    std::size_t before = 0;
    for (const auto& e : std::filesystem::directory_iterator(cache)) before += e.path().extension() == ".ascf";
    const auto data = load_dataset(manifest, audio_root_of(cfg), cache, cfg.frontend, cfg.threads);
    std::size_t after = 0;
    for (const auto& e : std::filesystem::directory_iterator(cache)) after += e.path().extension() == ".ascf";

    std::vector<frontend::ShardRecord> records;
    for (const auto& ex : data.examples) {
        frontend::ShardRecord rec;
        rec.n_mels = static_cast<std::uint32_t>(ex.n_mels);
        rec.n_frames = static_cast<std::uint32_t>(ex.n_frames);
        rec.values = ex.values;
        for (int c : ex.labels) rec.labels.push_back(static_cast<std::uint32_t>(c));
        records.push_back(std::move(rec));
    }
    const std::filesystem::path out(cfg.output_dir);
    frontend::write_shard_file(out / "dataset.ascf", records);
    write_text(out / "run_config.txt", cfg.to_text());
    return {data.size(), after - before};
}

train::TrainResult run_train(const RunConfig& cfg, std::function<bool(const train::EpochLog&)> on_epoch,
                             std::ostream* log) {
    require_manifest(cfg);
    if (cfg.output_dir.empty()) throw ConfigError("train needs an output directory (--out or paths.output_dir)");
    cfg.train.validate();
    cfg.augment.validate(cfg.frontend.canvas_height, cfg.frontend.canvas_width);
    if (!cfg.augment.noise_dir.empty() && !std::filesystem::is_directory(cfg.augment.noise_dir)) {
        throw IoError("noise directory not found: " + cfg.augment.noise_dir);
    }
    const auto manifest = load_manifest(cfg.manifest);
    if (manifest.classes.size() < 2) throw ConfigError("training needs at least two classes");

    auto spec = model::parse_arch_spec(cfg.stages, model::parse_preset(cfg.preset),
                                       static_cast<int>(manifest.classes.size()), cfg.window);
    spec.num_heads = cfg.num_heads;
    spec.validate();

    const std::filesystem::path out(cfg.output_dir);
    std::filesystem::create_directories(out);
    write_text(out / "run_config.txt", cfg.to_text());

    const bool waves = cfg.augment.noise && !cfg.augment.noise_dir.empty();
    const auto data = load_dataset(manifest, audio_root_of(cfg), cache_dir_of(cfg), cfg.frontend, cfg.threads, waves);

    train::tune_allocator();
    model::AscaModel model(spec, {cfg.train.seed});
    train::TrainOptions options;
    options.output_dir = out;
    options.metadata = checkpoint_metadata(manifest.classes, cfg.frontend);
    options.on_epoch = std::move(on_epoch);
    options.log = log;
    return train::train(model, data, cfg.train, cfg.augment, options);
}

std::string run_evaluate(const std::filesystem::path& checkpoint, const RunConfig& cfg,
                         const std::filesystem::path& csv_out) {
    require_manifest(cfg);
    auto loaded = open_checkpoint(checkpoint);
    auto manifest = load_manifest(cfg.manifest);
    // Re-index labels into the checkpoint's class order.
    std::vector<int> remap(manifest.classes.size(), -1);
    for (std::size_t i = 0; i < manifest.classes.size(); ++i) {
        auto it = std::find(loaded.classes.begin(), loaded.classes.end(), manifest.classes[i]);
        if (it == loaded.classes.end()) {
            throw ConfigError("class '" + manifest.classes[i] + "' of the manifest is unknown to the checkpoint");
        }
        remap[i] = static_cast<int>(it - loaded.classes.begin());
    }
    for (auto& row : manifest.rows) {
        for (auto& l : row.labels) l = remap[l];
    }
    manifest.classes = loaded.classes;
    const auto data = load_dataset(manifest, audio_root_of(cfg), cache_dir_of(cfg), loaded.frontend, cfg.threads);
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto result = train::evaluate_model(*loaded.ck.model, data, all, std::max(2, cfg.train.batch_size));
    if (!csv_out.empty()) write_text(csv_out, result.per_class_csv(loaded.classes));
    return result.to_json(loaded.classes);
}

std::string run_predict(const std::filesystem::path& checkpoint, const std::vector<std::filesystem::path>& files,
                        int top_k) {
    if (files.empty()) throw ConfigError("predict needs at least one audio file");
    if (top_k < 1) throw ConfigError("--top-k must be >= 1");
    auto loaded = open_checkpoint(checkpoint);
    auto& model = *loaded.ck.model;
    const auto& fp = loaded.frontend;
    Json out = Json::array();
    for (const auto& file : files) {
        if (!std::filesystem::exists(file)) throw IoError("audio file not found: " + file.string());
        const auto spec = frontend::log_mel_spectrogram(frontend::decode_wav(file), fp);
        auto canvas = frontend::fit_to_canvas(spec.values, spec.n_mels, spec.n_frames, fp.canvas_height,
                                              fp.canvas_width);
        const auto x = ops::reshape(canvas, {1, 1, fp.canvas_height, fp.canvas_width});
        const auto logits = model.forward(x, {});
        const auto& z = logits.values();
        std::vector<int> order(z.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return z[a] > z[b]; });
        Json top = Json::array();
        for (int i = 0; i < std::min<int>(top_k, static_cast<int>(order.size())); ++i) {
            const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(z[order[i]])));
            top.push_back(Json{{"class", loaded.classes[order[i]]}, {"index", order[i]}, {"score", score}});
        }
        out.push_back(Json{{"file", file.string()}, {"top", top}});
    }
    return out.dump();
}

std::string run_inspect(const std::filesystem::path& checkpoint) {
    auto loaded = open_checkpoint(checkpoint);
    const auto& model = *loaded.ck.model;
    const auto& spec = model.spec();
    Json j;
    j["stages"] = spec.stage_string();
    Json kinds = Json::array(), depths = Json::array(), widths = Json::array(), per_stage = Json::array();
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const auto& st = spec.stages[i];
        kinds.push_back(st.kind == model::StageKind::kConv ? "Conv" : "Attn");
        depths.push_back(st.depth);
        widths.push_back(st.channels);
        const std::string prefix = "s" + std::to_string(i + 1) + ".";
        std::int64_t n = 0;
        for (const auto& p : model.weights().entries()) {
            if (p.trainable && p.path.rfind(prefix, 0) == 0) n += p.value.numel();
        }
        per_stage.push_back(n);
    }
    std::int64_t buffers = 0;
    for (const auto& p : model.weights().entries()) {
        if (!p.trainable) buffers += p.value.numel();
    }
    j["stage_kinds"] = kinds;
    j["stage_depths"] = depths;
    j["stage_channels"] = widths;
    j["stem_channels"] = spec.stem_channels;
    j["preset"] = std::string(model::preset_name(spec.preset));
    j["window"] = spec.window;
    j["num_heads"] = Json::array();
    for (const auto& st : spec.stages) {
        j["num_heads"].push_back(st.kind == model::StageKind::kAttn ? spec.heads_for(st) : 0);
    }
    j["num_classes"] = spec.num_classes;
    j["parameters"] = model.weights().trainable_count();
    j["stage_parameters"] = per_stage;
    j["buffers"] = buffers;
    j["classes"] = loaded.classes;
    return j.dump();
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Audio spectrogram classifier: prepare data, train, evaluate, predict, inspect."};
    app.name("asca");
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string manifest, audio_root, output_dir, cache_dir, checkpoint, csv_out;
    int threads = 0, top_k = 5;
    std::vector<std::string> files;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "Override a config key: --set key=value (repeatable)");
        sub->add_option("--manifest", manifest, "Manifest CSV (path,labels)");
        sub->add_option("--audio-root", audio_root, "Directory the manifest paths are relative to");
        sub->add_option("--cache-dir", cache_dir, "Spectrogram shard cache");
        sub->add_option("--threads", threads, "Worker threads (default: ASCA_NUM_THREADS or all cores)");
    };
    auto* prepare = app.add_subcommand("prepare", "Compute spectrogram shards for a manifest");
    add_common(prepare);
    prepare->add_option("--out", output_dir, "Output directory");
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and a metrics log");
    add_common(train_cmd);
    train_cmd->add_option("--out", output_dir, "Output directory");
    auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a manifest; prints JSON");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    evaluate->add_option("--csv", csv_out, "Also write per-class AP as CSV");
    auto* predict = app.add_subcommand("predict", "Top-k classes for audio files; prints JSON");
    predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    predict->add_option("--top-k", top_k, "Number of classes per file");
    predict->add_option("files", files, "WAV files")->required();
    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint; prints JSON");
    inspect->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }
    CLI::App* active = app.get_subcommands().front();

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            std::ostringstream text;
            text << in.rdbuf();
            apply_config_text(cfg, text.str(), config_path);
        }
        if (!manifest.empty()) cfg.manifest = manifest;
        if (!audio_root.empty()) cfg.audio_root = audio_root;
        if (!output_dir.empty()) cfg.output_dir = output_dir;
        if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
        if (threads > 0) cfg.threads = threads;
        for (const auto& o : overrides) apply_override(cfg, o);

        if (active == prepare) {
            const auto s = run_prepare(cfg);
            out << Json{{"files", s.files}, {"computed", s.computed}, {"output_dir", cfg.output_dir}}.dump() << '\n';
        } else if (active == train_cmd) {
            const auto r = run_train(cfg);
            out << Json{{"steps", r.steps.size()},
                        {"best_epoch", r.best_epoch},
                        {"best_mAP", r.best_map},
                        {"checkpoint", (std::filesystem::path(cfg.output_dir) / "best.ckpt").string()}}
                       .dump()
                << '\n';
        } else if (active == evaluate) {
            out << run_evaluate(checkpoint, cfg, csv_out) << '\n';
        } else if (active == predict) {
            std::vector<std::filesystem::path> paths(files.begin(), files.end());
            out << run_predict(checkpoint, paths, top_k) << '\n';
        } else if (active == inspect) {
            out << run_inspect(checkpoint) << '\n';
        }
        return 0;
    } catch (const UserError& e) {
        err << "error: " << e.what() << "\n\n" << active->help();
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace asca::cli
