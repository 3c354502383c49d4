#include "asca/model.hpp"

#include <cmath>

#include "asca/regularize.hpp"

namespace asca::model {

Tensor& ModelWeights::add(std::string path, Tensor value, bool trainable, bool decay) {
    if (index_.count(path)) throw ConfigError("duplicate weight path " + path);
    value.set_requires_grad(trainable);
    index_[path] = entries_.size();
    entries_.push_back({std::move(path), std::move(value), trainable, decay});
    return entries_.back().value;
}

const Parameter& ModelWeights::at(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw ConfigError("unknown weight path " + path);
    return entries_[it->second];
}

Tensor& ModelWeights::tensor(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw ConfigError("unknown weight path " + path);
    return entries_[it->second].value;
}

std::int64_t ModelWeights::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : entries_) {
        if (p.trainable) n += p.value.numel();
    }
    return n;
}

std::vector<std::vector<Scalar>> ModelWeights::snapshot() const {
    std::vector<std::vector<Scalar>> out;
    out.reserve(entries_.size());
    for (const auto& p : entries_) out.emplace_back(p.value.values().begin(), p.value.values().end());
    return out;
}

void ModelWeights::restore(const std::vector<std::vector<Scalar>>& values) {
    if (values.size() != entries_.size()) throw ContractError("weight snapshot does not match model");
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto dst = entries_[i].value.data();
        if (values[i].size() != dst.size()) throw ContractError("weight snapshot size mismatch at " + entries_[i].path);
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d_same(x, weight, bias, stride, groups); }

Tensor BatchNorm2d::forward(const Tensor& x, ops::Mode mode) { return ops::batch_norm(x, gamma, beta, state, mode); }

Tensor squeeze_excitation(const Tensor& x, const SqueezeExcitation& se) {
    const auto pooled = ops::global_avg_pool(x);
    const auto hidden = ops::gelu(se.reduce.forward(pooled));
    const auto gate = ops::sigmoid(se.expand.forward(hidden));
    return ops::channel_scale(x, gate);
}

Tensor mbconv_block(const Tensor& x, MBConvParams& p, const ForwardOptions& opts, double drop_prob) {
    Tensor shortcut = x;
    if (p.has_shortcut_conv) {
        shortcut = p.shortcut.forward(p.stride == 2 ? ops::avg_pool2d(x, 2, 2) : x);
    }
    Tensor h = p.pre_norm.forward(x, opts.mode);
    h = ops::gelu(p.expand_norm.forward(p.expand.forward(h), opts.mode));
    h = ops::gelu(p.depthwise_norm.forward(p.depthwise.forward(h), opts.mode));
    h = squeeze_excitation(h, p.se);
    h = p.project.forward(h);
    return train::stochastic_depth(h, shortcut, drop_prob, opts.mode, opts.rng);
}

std::vector<std::int64_t> relative_position_index(int window) {
    if (window < 1) throw ConfigError("relative_position_index: window must be >= 1");
    const std::int64_t w = window;
    const std::int64_t span = 2 * w - 1;
    const std::int64_t tokens = w * w;
    std::vector<std::int64_t> index(static_cast<std::size_t>(tokens * tokens));
    for (std::int64_t p = 0; p < tokens; ++p) {
        const auto py = p / w, px = p % w;
        for (std::int64_t q = 0; q < tokens; ++q) {
            const auto qy = q / w, qx = q % w;
            index[p * tokens + q] = (py - qy + w - 1) * span + (px - qx + w - 1);
        }
    }
    return index;
}

namespace {

constexpr Scalar kMaskedLogit = Scalar(-1e9);

}  // namespace

Tensor relative_window_attention(const Tensor& x, AttentionParams& p, int window, int heads,
                                 const ForwardOptions& opts, double drop_prob, Tensor* weights_out) {
    if (x.ndim() != 4) throw ShapeError("relative_window_attention: expected [B x C x H x W], got " + to_string(x.shape()));
    if (window < 1) throw ConfigError("relative_window_attention: window must be >= 1");
    const auto batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    if (heads < 1 || channels % heads != 0) {
        throw ConfigError("relative_window_attention: " + std::to_string(channels) + " channels not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const std::int64_t w = window;
    const auto rows = (height + w - 1) / w, cols = (width + w - 1) / w;
    const auto padded_h = rows * w, padded_w = cols * w;
    const bool padded = padded_h != height || padded_w != width;
    const auto n_windows = batch * rows * cols;
    const auto tokens = w * w;
    const auto head_dim = channels / heads;

    Tensor h = p.norm.forward(x, opts.mode);
    if (padded) h = ops::pad2d(h, 0, padded_h - height, 0, padded_w - width);

    // [B, C, rows, w, cols, w] -> [B, rows, cols, w, w, C] -> [N, T, C]
    h = ops::reshape(h, {batch, channels, rows, w, cols, w});
    h = ops::permute(h, {0, 2, 4, 3, 5, 1});
    h = ops::reshape(h, {n_windows, tokens, channels});

    auto qkv = p.qkv.forward(h);
    qkv = ops::reshape(qkv, {n_windows, tokens, 3, heads, head_dim});
    qkv = ops::permute(qkv, {2, 0, 3, 1, 4});  // [3, N, heads, T, d]
    const auto q = ops::reshape(ops::select_first(qkv, 0), {n_windows * heads, tokens, head_dim});
    const auto k = ops::reshape(ops::select_first(qkv, 1), {n_windows * heads, tokens, head_dim});
    const auto v = ops::reshape(ops::select_first(qkv, 2), {n_windows * heads, tokens, head_dim});

    auto logits = ops::scale(ops::bmm(q, k, true), Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim)));
    logits = ops::reshape(logits, {n_windows, heads, tokens, tokens});
    if (opts.use_relative_bias) {
        const auto bias = ops::gather_columns(p.rel_bias, relative_position_index(window));
        logits = ops::add_leading(logits, ops::reshape(bias, {heads, tokens, tokens}));
    }
    if (padded) {
        auto mask = Tensor::zeros({n_windows, heads, tokens, tokens});
        auto m = mask.data();
        for (std::int64_t n = 0; n < n_windows; ++n) {
            const auto r = (n / cols) % rows, c = n % cols;
            for (std::int64_t key = 0; key < tokens; ++key) {
                const bool outside = r * w + key / w >= height || c * w + key % w >= width;
                if (!outside) continue;
                for (std::int64_t hd = 0; hd < heads; ++hd) {
                    for (std::int64_t qi = 0; qi < tokens; ++qi) {
                        m[((n * heads + hd) * tokens + qi) * tokens + key] = kMaskedLogit;
                    }
                }
            }
        }
        logits = ops::add(logits, mask);
    }
    const auto attn = ops::softmax(logits, -1);
    if (weights_out != nullptr) *weights_out = attn;

    auto out = ops::bmm(ops::reshape(attn, {n_windows * heads, tokens, tokens}), v);
    out = ops::reshape(out, {n_windows, heads, tokens, head_dim});
    out = ops::permute(out, {0, 2, 1, 3});
    out = ops::reshape(out, {n_windows, tokens, channels});
    out = p.proj.forward(out);

    out = ops::reshape(out, {batch, rows, cols, w, w, channels});
    out = ops::permute(out, {0, 5, 1, 3, 2, 4});
    out = ops::reshape(out, {batch, channels, padded_h, padded_w});
    if (padded) out = ops::crop2d(out, height, width);
    return train::stochastic_depth(out, x, drop_prob, opts.mode, opts.rng);
}

Tensor mlp_block(const Tensor& x, MlpParams& p, const ForwardOptions& opts, double drop_prob) {
    auto h = p.norm.forward(x, opts.mode);
    h = ops::gelu(p.fc1.forward(h));
    h = p.fc2.forward(h);
    return train::stochastic_depth(h, x, drop_prob, opts.mode, opts.rng);
}

namespace {

class Builder {
public:
    Builder(ModelWeights& weights, const InitOptions& init) : weights_(weights), rng_(init.seed), init_(init) {}

    Tensor truncated(const std::string& path, Shape shape, double stddev, bool decay = true) {
        std::vector<Scalar> data(static_cast<std::size_t>(numel(shape)));
        for (auto& v : data) v = static_cast<Scalar>(rng_.truncated_normal(stddev));
        return weights_.add(path, Tensor::from(std::move(shape), std::move(data)), true, decay);
    }

    Tensor constant(const std::string& path, Shape shape, Scalar value, bool decay) {
        return weights_.add(path, Tensor::full(std::move(shape), value), true, decay);
    }

    Conv2d conv(const std::string& path, int in, int out, int kernel, int stride, int groups, bool bias,
                bool zero_init = false) {
        Conv2d c;
        c.stride = stride;
        c.groups = groups;
        const Shape shape{out, in / groups, kernel, kernel};
        if (zero_init) {
            c.weight = constant(path + ".weight", shape, 0, true);
        } else {
            const double fan_in = static_cast<double>(in / groups) * kernel * kernel;
            c.weight = truncated(path + ".weight", shape, std::sqrt(2.0 / fan_in));
        }
        if (bias) c.bias = constant(path + ".bias", {out}, 0, false);
        return c;
    }

    BatchNorm2d norm(const std::string& path, int channels) {
        BatchNorm2d bn;
        bn.gamma = constant(path + ".gamma", {channels}, 1, false);
        bn.beta = constant(path + ".beta", {channels}, 0, false);
        bn.state = ops::BatchNormState(channels);
        weights_.add(path + ".running_mean", bn.state.running_mean, false, false);
        weights_.add(path + ".running_var", bn.state.running_var, false, false);
        return bn;
    }

    Linear linear(const std::string& path, int in, int out, bool zero_init = false) {
        Linear l;
        if (zero_init) {
            l.weight = constant(path + ".weight", {out, in}, 0, true);
        } else {
            l.weight = truncated(path + ".weight", {out, in}, init_.projection_std);
        }
        l.bias = constant(path + ".bias", {out}, 0, false);
        return l;
    }

    MBConvParams mbconv(const std::string& path, int in, int out, int stride, const ArchSpec& spec) {
        const int hidden = out * spec.expansion;
        if (hidden % spec.se_reduction != 0) {
            throw ConfigError(path + ": hidden width " + std::to_string(hidden) +
                              " not divisible by squeeze-excitation ratio " + std::to_string(spec.se_reduction));
        }
        MBConvParams p;
        p.stride = stride;
        p.pre_norm = norm(path + ".pre_norm", in);
        p.expand = conv(path + ".expand", in, hidden, 1, 1, 1, false);
        p.expand_norm = norm(path + ".expand_norm", hidden);
        p.depthwise = conv(path + ".depthwise", hidden, hidden, 3, stride, hidden, false);
        p.depthwise_norm = norm(path + ".depthwise_norm", hidden);
        p.se.reduce = linear(path + ".se.reduce", hidden, hidden / spec.se_reduction);
        p.se.expand = linear(path + ".se.expand", hidden / spec.se_reduction, hidden);
        p.project = conv(path + ".project", hidden, out, 1, 1, 1, true, true);
        if (stride != 1 || in != out) {
            p.has_shortcut_conv = true;
            p.shortcut = conv(path + ".shortcut", in, out, 1, 1, 1, true);
        }
        return p;
    }

    TransformerBlock transformer(const std::string& path, int channels, int heads, int window) {
        TransformerBlock b;
        b.attn.norm = norm(path + ".attn.norm", channels);
        b.attn.qkv = linear(path + ".attn.qkv", channels, 3 * channels);
        // Not zero-initialized: a zero proj would block every gradient into
        // qkv and rel_bias on the first step.
        b.attn.proj = linear(path + ".attn.proj", channels, channels);
        const std::int64_t span = 2 * static_cast<std::int64_t>(window) - 1;
        b.attn.rel_bias = truncated(path + ".attn.rel_bias", {heads, span * span}, init_.projection_std, false);
        b.mlp.norm = norm(path + ".mlp.norm", channels);
        b.mlp.fc1 = conv(path + ".mlp.fc1", channels, 4 * channels, 1, 1, 1, true);
        b.mlp.fc2 = conv(path + ".mlp.fc2", 4 * channels, channels, 1, 1, 1, true, true);
        return b;
    }

private:
    ModelWeights& weights_;
    Rng rng_;
    InitOptions init_;
};

}  // namespace

AscaModel::AscaModel(const ArchSpec& spec, const InitOptions& init) : spec_(spec) {
    spec_.validate();
    Builder b(weights_, init);
    stem1_ = b.conv("stem.conv1", spec_.in_channels, spec_.stem_channels, 3, 2, 1, false);
    stem1_norm_ = b.norm("stem.norm1", spec_.stem_channels);
    stem2_ = b.conv("stem.conv2", spec_.stem_channels, spec_.stem_channels, 3, 1, 1, true);

    int channels = spec_.stem_channels;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        const auto& st = spec_.stages[i];
        const std::string prefix = "s" + std::to_string(i + 1);
        Stage stage;
        stage.spec = st;
        if (st.kind == StageKind::kConv) {
            for (int j = 0; j < st.depth; ++j) {
                stage.conv_blocks.push_back(b.mbconv(prefix + ".b" + std::to_string(j), j == 0 ? channels : st.channels,
                                                     st.channels, j == 0 ? st.stride : 1, spec_));
            }
        } else {
            stage.has_downsample = true;
            stage.downsample = b.conv(prefix + ".down", channels, st.channels, 3, st.stride, 1, true);
            for (int j = 0; j < st.depth; ++j) {
                stage.attn_blocks.push_back(
                    b.transformer(prefix + ".b" + std::to_string(j), st.channels, spec_.heads_for(st), spec_.window));
            }
        }
        channels = st.channels;
        stages_.push_back(std::move(stage));
    }
    head_norm_ = b.norm("head.norm", channels);
    head_ = b.linear("head.fc", channels, spec_.num_classes);
}

int AscaModel::total_blocks() const {
    int n = 0;
    for (const auto& st : spec_.stages) n += st.depth;
    return n;
}

std::vector<std::int64_t> AscaModel::spatial_trace(std::int64_t input) const {
    std::vector<std::int64_t> trace;
    std::int64_t s = (input + 1) / 2;
    trace.push_back(s);
    for (const auto& st : spec_.stages) {
        s = (s + st.stride - 1) / st.stride;
        trace.push_back(s);
    }
    return trace;
}

Tensor AscaModel::forward(const Tensor& x, const ForwardOptions& opts) {
    if (x.ndim() != 4 || x.dim(1) != spec_.in_channels) {
        throw ShapeError("model: expected [B x " + std::to_string(spec_.in_channels) + " x H x W], got " +
                         to_string(x.shape()));
    }
    Tensor h = stem1_.forward(x);
    h = ops::gelu(stem1_norm_.forward(h, opts.mode));
    h = stem2_.forward(h);

    const int total = total_blocks();
    int block = 0;
    auto drop_for = [&](int index) {
        return total > 1 ? opts.drop_path_max * index / (total - 1) : opts.drop_path_max;
    };
    for (auto& stage : stages_) {
        if (stage.spec.kind == StageKind::kConv) {
            for (auto& blk : stage.conv_blocks) h = mbconv_block(h, blk, opts, drop_for(block++));
        } else {
            h = stage.downsample.forward(h);
            const int heads = spec_.heads_for(stage.spec);
            for (auto& blk : stage.attn_blocks) {
                const double p = drop_for(block++);
                h = relative_window_attention(h, blk.attn, spec_.window, heads, opts, p);
                h = mlp_block(h, blk.mlp, opts, p);
            }
        }
    }
    h = head_norm_.forward(h, opts.mode);
    return head_.forward(ops::global_avg_pool(h));
}

}  // namespace asca::model
