#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "asca/arch.hpp"
#include "asca/ops.hpp"
#include "asca/rng.hpp"

namespace asca::model {

struct Parameter {
    std::string path;  // canonical dotted path, e.g. "s4.b0.attn.rel_bias"
    Tensor value;
    bool trainable = true;
    bool decay = true;  // false for norm affines, biases and bias tables
};

// Every learnable tensor and buffer of a model, in construction order.
// Entries alias the tensors held by the layers.
class ModelWeights {
public:
    Tensor& add(std::string path, Tensor value, bool trainable = true, bool decay = true);
    const Parameter& at(const std::string& path) const;
    Tensor& tensor(const std::string& path);
    bool contains(const std::string& path) const { return index_.count(path) != 0; }

    std::vector<Parameter>& entries() { return entries_; }
    const std::vector<Parameter>& entries() const { return entries_; }
    std::int64_t trainable_count() const;

    // Deep copy of every value, in entry order.
    std::vector<std::vector<Scalar>> snapshot() const;
    void restore(const std::vector<std::vector<Scalar>>& values);

private:
    std::vector<Parameter> entries_;
    std::map<std::string, std::size_t> index_;
};

struct ForwardOptions {
    ops::Mode mode = ops::Mode::kEval;
    Rng* rng = nullptr;           // stochastic depth draws (train mode only)
    double drop_path_max = 0.0;   // drop probability of the deepest block
    bool use_relative_bias = true;  // false gives plain windowed attention
};

// Layers. Tensors are shared handles registered in ModelWeights.

struct Conv2d {
    Tensor weight;  // [out x in/groups x k x k]
    Tensor bias;    // [out] or undefined
    int stride = 1;
    int groups = 1;

    // "Same" padding: output extent ceil(H / stride), extra padding at the
    // bottom/right when the total is odd.
    Tensor forward(const Tensor& x) const;
};

struct BatchNorm2d {
    Tensor gamma;
    Tensor beta;
    ops::BatchNormState state;

    Tensor forward(const Tensor& x, ops::Mode mode);
};

struct Linear {
    Tensor weight;  // [out x in]
    Tensor bias;    // [out]

    Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

struct SqueezeExcitation {
    Linear reduce;  // C -> C / r
    Linear expand;  // C / r -> C
};

// pooled -> linear -> gelu -> linear -> sigmoid gate; returns x * gate.
Tensor squeeze_excitation(const Tensor& x, const SqueezeExcitation& se);

struct MBConvParams {
    BatchNorm2d pre_norm;
    Conv2d expand;      // 1x1, C_in -> expansion * C_out
    BatchNorm2d expand_norm;
    Conv2d depthwise;   // 3x3, stride 1 or 2
    BatchNorm2d depthwise_norm;
    SqueezeExcitation se;
    Conv2d project;     // 1x1, hidden -> C_out; zero-initialized
    bool has_shortcut_conv = false;
    Conv2d shortcut;    // 1x1 after stride-2 average pooling
    int stride = 1;
};

Tensor mbconv_block(const Tensor& x, MBConvParams& p, const ForwardOptions& opts, double drop_prob);

// index_map[p * window^2 + q] = flattened (p - q) + (window - 1, window - 1)
// in a (2 * window - 1)^2 table, for tokens p, q of a window x window grid.
std::vector<std::int64_t> relative_position_index(int window);

struct AttentionParams {
    BatchNorm2d norm;
    Linear qkv;       // C -> 3C
    Linear proj;      // C -> C
    Tensor rel_bias;  // [heads x (2 * window - 1)^2]
};

// Pre-norm windowed multi-head self-attention with a learned relative
// position bias, plus the residual add. Inputs whose extents are not a
// multiple of `window` are zero-padded (padded keys masked) and cropped.
// When `weights_out` is given it receives the [N x heads x T x T] softmax.
Tensor relative_window_attention(const Tensor& x, AttentionParams& p, int window, int heads,
                                 const ForwardOptions& opts, double drop_prob = 0.0, Tensor* weights_out = nullptr);

struct MlpParams {
    BatchNorm2d norm;
    Conv2d fc1;  // 1x1, C -> 4C
    Conv2d fc2;  // 1x1, 4C -> C; zero-initialized
};

Tensor mlp_block(const Tensor& x, MlpParams& p, const ForwardOptions& opts, double drop_prob);

struct TransformerBlock {
    AttentionParams attn;
    MlpParams mlp;
};

struct Stage {
    StageSpec spec;
    bool has_downsample = false;  // attention stages: stride-2 conv first
    Conv2d downsample;
    std::vector<MBConvParams> conv_blocks;
    std::vector<TransformerBlock> attn_blocks;
};

struct InitOptions {
    std::uint64_t seed = 0;
    double projection_std = 0.02;
};

class AscaModel {
public:
    explicit AscaModel(const ArchSpec& spec, const InitOptions& init = {});
    AscaModel(const AscaModel&) = delete;
    AscaModel& operator=(const AscaModel&) = delete;

    // x: [B x in_channels x H x W] -> logits [B x num_classes]. Train mode
    // updates batch-norm running statistics.
    Tensor forward(const Tensor& x, const ForwardOptions& opts = {});

    const ArchSpec& spec() const { return spec_; }
    ModelWeights& weights() { return weights_; }
    const ModelWeights& weights() const { return weights_; }
    std::vector<Stage>& stages() { return stages_; }
    int total_blocks() const;

    // Spatial extent after the stem and each stage for a square input.
    std::vector<std::int64_t> spatial_trace(std::int64_t input) const;

private:
    ArchSpec spec_;
    ModelWeights weights_;
    Conv2d stem1_;
    BatchNorm2d stem1_norm_;
    Conv2d stem2_;
    std::vector<Stage> stages_;
    BatchNorm2d head_norm_;
    Linear head_;
};

}  // namespace asca::model
