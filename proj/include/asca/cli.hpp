#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "asca/arch.hpp"
#include "asca/augment.hpp"
#include "asca/frontend.hpp"
#include "asca/train.hpp"

namespace asca::cli {

// ---- manifest -------------------------------------------------------------

struct ManifestRow {
    std::string path;  // relative to the audio root
    std::vector<int> labels;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<ManifestRow> rows;
};

// CSV with header "path,labels"; labels are space-separated class names.
// Classes come from classes.txt next to the manifest (one per line) when it
// exists, else the sorted unique label names. Errors name the 1-based line.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& csv, const std::vector<std::string>& classes = {});

// ---- configuration --------------------------------------------------------

struct RunConfig {
    std::string manifest;
    std::string audio_root;  // empty: the manifest's directory
    std::string output_dir;
    std::string cache_dir;  // empty: <output_dir>/cache
    int threads = 0;        // 0: ASCA_NUM_THREADS, else the hardware count

    frontend::FrontendParams frontend;
    augment::AugmentConfig augment;
    train::TrainConfig train;

    std::string stages = "C-C-C-T";
    std::string preset = "desk";
    int window = 7;
    int num_heads = 0;

    // Applies one "key = value" assignment. Throws ConfigError on unknown
    // keys and ParseError on malformed values.
    void set(const std::string& key, const std::string& value);
    // Every key with its resolved value, one "key = value" line each.
    std::string to_text() const;
    // Keys accepted by set(), in to_text() order.
    static std::vector<std::string> keys();
};

// Parses a config file body: "key = value" lines, '#' comments and blank
// lines. Errors carry `source` and the line number.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "config");
// "key=value" from --set.
void apply_override(RunConfig& cfg, const std::string& assignment);

int resolve_threads(int requested);

// ---- data -----------------------------------------------------------------

// 64-bit FNV-1a over the audio bytes and the frontend parameters.
std::uint64_t shard_key(const std::vector<std::uint8_t>& audio, const frontend::FrontendParams& params);

// Spectrograms for every manifest row, computed once and cached as shard
// files named by shard_key. With `keep_waves` the decoded audio is retained
// for waveform augmentation.
train::Dataset load_dataset(const DatasetManifest& manifest, const std::filesystem::path& audio_root,
                            const std::filesystem::path& cache_dir, const frontend::FrontendParams& params,
                            int threads, bool keep_waves = false);

// ---- commands -------------------------------------------------------------

struct PrepareSummary {
    std::size_t files = 0;
    std::size_t computed = 0;  // the rest were already cached
};

PrepareSummary run_prepare(const RunConfig& cfg);

// Trains from cfg; writes run_config.txt, metrics.jsonl, best.ckpt and
// last.ckpt into cfg.output_dir. `on_epoch` may stop training early.
train::TrainResult run_train(const RunConfig& cfg, std::function<bool(const train::EpochLog&)> on_epoch = {},
                             std::ostream* log = nullptr);

// Returns the EvalResult JSON.
std::string run_evaluate(const std::filesystem::path& checkpoint, const RunConfig& cfg,
                         const std::filesystem::path& csv_out = {});

// JSON array with the top-k classes and scores for each file.
std::string run_predict(const std::filesystem::path& checkpoint, const std::vector<std::filesystem::path>& files,
                        int top_k);

// JSON summary of the architecture and parameter counts.
std::string run_inspect(const std::filesystem::path& checkpoint);

// Entry point: parses argv, runs a subcommand and maps errors to exit codes
// (0 success, 1 user error, 2 internal error).
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace asca::cli
