#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>

#include "asca/model.hpp"
#include "asca/ops.hpp"
#include "asca/regularize.hpp"
#include "asca/rng.hpp"
#include "asca/train.hpp"

namespace asca::testing {

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<Scalar> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<Scalar>(lo + (hi - lo) * rng.uniform());
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so relu's kink stays out of reach of h.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
    auto t = random_tensor(std::move(shape), seed, 0.1, 1.0);
    Rng rng(seed + 1);
    for (auto& x : t.data()) {
        if (rng.bernoulli(0.5)) x = -x;
    }
    return t;
}

// Contracts with a fixed random weight so every output entry matters.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed = 99) {
    auto w = random_tensor(out.shape(), seed);
    w.set_requires_grad(false);
    return ops::sum(ops::mul(out, w));
}

double evaluate(const std::function<Tensor()>& fn) { return static_cast<double>(fn().item()); }

void randomize(model::AscaModel& m, std::uint64_t seed, double scale) {
    Rng rng(seed);
    for (auto& p : m.weights().entries()) {
        if (!p.trainable) continue;
        for (auto& v : p.value.data()) v = static_cast<Scalar>(rng.normal(0.0, scale));
    }
}

model::ArchSpec micro_spec(const std::string& stages, int window, int heads) {
    auto spec = model::parse_arch_spec(stages, model::Preset::kMicro, 3, window);
    spec.num_heads = heads;
    return spec;
}

GradCase op_case(std::string name, std::vector<Tensor> leaves, std::function<Tensor()> fn) {
    return {std::move(name), [leaves, fn] { return check_gradients(leaves, fn); }};
}

std::vector<GradCase> build_cases() {
    std::vector<GradCase> cases;
    using ops::Mode;

    {
        auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2);
        cases.push_back(op_case("matmul", {a, b}, [=] { return weighted_sum(ops::matmul(a, b)); }));
    }
    {
        auto a = random_tensor({2, 3, 4}, 3), b = random_tensor({2, 4, 5}, 4), bt = random_tensor({2, 5, 4}, 5);
        cases.push_back(op_case("bmm", {a, b}, [=] { return weighted_sum(ops::bmm(a, b)); }));
        cases.push_back(op_case("bmm_transposed", {a, bt}, [=] { return weighted_sum(ops::bmm(a, bt, true)); }));
    }
    {
        auto x = random_tensor({2, 3, 4}, 6), w = random_tensor({5, 4}, 7), b = random_tensor({5}, 8);
        cases.push_back(op_case("linear", {x, w, b}, [=] { return weighted_sum(ops::linear(x, w, b)); }));
        cases.push_back(op_case("linear_no_bias", {x, w}, [=] { return weighted_sum(ops::linear(x, w)); }));
    }
    {
        auto a = random_tensor({3, 4}, 9), b = random_tensor({3, 4}, 10);
        cases.push_back(op_case("add", {a, b}, [=] { return weighted_sum(ops::add(a, b)); }));
        cases.push_back(op_case("sub", {a, b}, [=] { return weighted_sum(ops::sub(a, b)); }));
        cases.push_back(op_case("mul", {a, b}, [=] { return weighted_sum(ops::mul(a, b)); }));
        cases.push_back(op_case("scale", {a}, [=] { return weighted_sum(ops::scale(a, Scalar(-1.7))); }));
        cases.push_back(op_case("sum", {a}, [=] { return ops::scale(ops::sum(ops::mul(a, a)), Scalar(0.5)); }));
        cases.push_back(op_case("mean", {a}, [=] { return ops::mean(ops::mul(a, b)); }));
    }
    {
        auto x = random_tensor({3, 2, 4}, 11), b = random_tensor({2, 4}, 12);
        cases.push_back(op_case("add_leading", {x, b}, [=] { return weighted_sum(ops::add_leading(x, b)); }));
        const std::vector<Scalar> f = {Scalar(0.5), Scalar(-2), Scalar(1.25)};
        cases.push_back(op_case("scale_rows", {x}, [=] { return weighted_sum(ops::scale_rows(x, f)); }));
    }
    {
        auto x = random_tensor({2, 3, 4, 5}, 13), g = random_tensor({2, 3}, 14);
        cases.push_back(op_case("channel_scale", {x, g}, [=] { return weighted_sum(ops::channel_scale(x, g)); }));
    }
    {
        auto x = random_tensor({4, 5}, 15, -3.0, 3.0);
        auto r = away_from_zero({4, 5}, 16);
        cases.push_back(op_case("gelu", {x}, [=] { return weighted_sum(ops::gelu(x)); }));
        cases.push_back(op_case("sigmoid", {x}, [=] { return weighted_sum(ops::sigmoid(x)); }));
        cases.push_back(op_case("relu", {r}, [=] { return weighted_sum(ops::relu(r)); }));
    }
    {
        auto x = random_tensor({2, 3, 4}, 17, -2.0, 2.0);
        cases.push_back(op_case("softmax_last", {x}, [=] { return weighted_sum(ops::softmax(x, -1)); }));
        cases.push_back(op_case("softmax_middle", {x}, [=] { return weighted_sum(ops::softmax(x, 1)); }));
    }
    {
        auto x = random_tensor({2, 4, 5, 6}, 18), w = random_tensor({6, 4, 3, 3}, 19), b = random_tensor({6}, 20);
        auto wg = random_tensor({6, 2, 3, 3}, 21), wd = random_tensor({4, 1, 3, 3}, 22);
        cases.push_back(op_case("conv2d", {x, w, b}, [=] { return weighted_sum(ops::conv2d(x, w, b, 1, 1)); }));
        auto xs = random_tensor({2, 4, 5, 7}, 34);
        cases.push_back(op_case("conv2d_stride2", {xs, w, b}, [=] { return weighted_sum(ops::conv2d(xs, w, b, 2, 1)); }));
        cases.push_back(op_case("conv2d_groups", {x, wg}, [=] { return weighted_sum(ops::conv2d(x, wg, {}, 1, 0, 2)); }));
        cases.push_back(op_case("conv2d_same_stride2", {x, w, b},
                                [=] { return weighted_sum(ops::conv2d_same(x, w, b, 2)); }));
        cases.push_back(op_case("conv2d_same_depthwise", {x, wd},
                                [=] { return weighted_sum(ops::conv2d_same(x, wd, {}, 2, 4)); }));
    }
    {
        auto x = random_tensor({2, 3, 5, 7}, 23);
        cases.push_back(op_case("avg_pool2d", {x}, [=] { return weighted_sum(ops::avg_pool2d(x, 2, 2)); }));
        cases.push_back(op_case("global_avg_pool", {x}, [=] { return weighted_sum(ops::global_avg_pool(x)); }));
        cases.push_back(op_case("pad2d", {x}, [=] { return weighted_sum(ops::pad2d(x, 1, 2, 0, 3)); }));
        cases.push_back(op_case("crop2d", {x}, [=] { return weighted_sum(ops::crop2d(x, 3, 4)); }));
        cases.push_back(op_case("reshape", {x}, [=] { return weighted_sum(ops::reshape(x, {6, 35})); }));
        cases.push_back(op_case("permute", {x}, [=] { return weighted_sum(ops::permute(x, {2, 0, 3, 1})); }));
        cases.push_back(op_case("select_first", {x}, [=] { return weighted_sum(ops::select_first(x, 1)); }));
    }
    {
        auto t = random_tensor({3, 9}, 24);
        const std::vector<std::int64_t> idx = {4, 0, 8, 4, 2, 2, 7};
        cases.push_back(op_case("gather_columns", {t}, [=] { return weighted_sum(ops::gather_columns(t, idx)); }));
    }
    {
        auto x = random_tensor({3, 4, 3, 2}, 25), g = random_tensor({4}, 26, 0.5, 1.5), b = random_tensor({4}, 27);
        cases.push_back(op_case("batch_norm_train", {x, g, b}, [=] {
            ops::BatchNormState st(4);
            return weighted_sum(ops::batch_norm(x, g, b, st, Mode::kTrain));
        }));
        cases.push_back(op_case("batch_norm_eval", {x, g, b}, [=] {
            ops::BatchNormState st(4);
            st.running_mean = random_tensor({4}, 28).detach();
            st.running_var = random_tensor({4}, 29, 0.5, 2.0).detach();
            st.running_mean.set_requires_grad(false);
            st.running_var.set_requires_grad(false);
            return weighted_sum(ops::batch_norm(x, g, b, st, Mode::kEval));
        }));
    }
    {
        auto r = random_tensor({4, 3, 2, 2}, 30), id = random_tensor({4, 3, 2, 2}, 31);
        cases.push_back(op_case("stochastic_depth", {r, id}, [=] {
            Rng rng(7);
            return weighted_sum(train::stochastic_depth(r, id, 0.4, Mode::kTrain, &rng));
        }));
    }
    {
        auto z = random_tensor({3, 4}, 32, -4.0, 4.0), t = random_tensor({3, 4}, 33, 0.0, 1.0);
        t.set_requires_grad(false);
        cases.push_back(op_case("bce_with_logits", {z}, [=] { return train::bce_with_logits(z, t); }));
    }

    // Model blocks; weights randomized so zero-initialized projections do
    // not hide upstream gradients.
    auto block_case = [](std::string name, std::function<Tensor(model::AscaModel&, const Tensor&)> body,
                         Shape input, std::string stages, int window, int heads) {
        return GradCase{std::move(name), [=] {
            auto m = std::make_shared<model::AscaModel>(micro_spec(stages, window, heads));
            randomize(*m, 40, 0.3);
            auto x = random_tensor(input, 41);
            std::vector<Tensor> leaves = {x};
            for (auto& p : m->weights().entries()) {
                if (p.trainable) leaves.push_back(p.value);
            }
            return check_gradients(leaves, [=] { return weighted_sum(body(*m, x)); });
        }};
    };
    model::ForwardOptions train_opts;
    train_opts.mode = ops::Mode::kTrain;
    cases.push_back(block_case(
        "squeeze_excitation",
        [](model::AscaModel& m, const Tensor& x) { return model::squeeze_excitation(x, m.stages()[0].conv_blocks[0].se); },
        {2, 16, 3, 3}, "C-C-C-C", 7, 0));
    cases.push_back(block_case(
        "mbconv_stride2",
        [train_opts](model::AscaModel& m, const Tensor& x) {
            return model::mbconv_block(x, m.stages()[0].conv_blocks[0], train_opts, 0.0);
        },
        {3, 4, 5, 5}, "C-C-C-C", 7, 0));
    cases.push_back(block_case(
        "mbconv_drop_path",
        [train_opts](model::AscaModel& m, const Tensor& x) {
            Rng rng(3);
            auto opts = train_opts;
            opts.rng = &rng;
            return model::mbconv_block(x, m.stages()[0].conv_blocks[0], opts, 0.5);
        },
        {4, 4, 4, 4}, "C-C-C-C", 7, 0));
    cases.push_back(block_case(
        "attention_window2",
        [train_opts](model::AscaModel& m, const Tensor& x) {
            return model::relative_window_attention(x, m.stages()[3].attn_blocks[0].attn, 2, 2, train_opts);
        },
        {2, 8, 4, 4}, "C-C-C-T", 7, 2));
    cases.push_back(block_case(
        "attention_padded_window3",
        [train_opts](model::AscaModel& m, const Tensor& x) {
            return model::relative_window_attention(x, m.stages()[3].attn_blocks[0].attn, 3, 2, train_opts);
        },
        {2, 8, 4, 4}, "C-C-C-T", 7, 2));
    cases.push_back(block_case(
        "mlp_block",
        [train_opts](model::AscaModel& m, const Tensor& x) {
            return model::mlp_block(x, m.stages()[3].attn_blocks[0].mlp, train_opts, 0.0);
        },
        {2, 8, 3, 3}, "C-C-C-T", 7, 2));

    for (const char* stages : {"C-C-C-T", "C-C-T-T"}) {
        std::string label = stages;
        std::replace(label.begin(), label.end(), '-', '_');
        cases.push_back({"micro_model_" + label, [stages] {
            auto m = std::make_shared<model::AscaModel>(micro_spec(stages, 7, 2));
            randomize(*m, 50, 0.3);
            auto x = random_tensor({3, 1, 16, 16}, 51);
            auto y = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 1, 0, 0, 1});
            std::vector<Tensor> leaves = {x};
            for (auto& p : m->weights().entries()) {
                if (p.trainable) leaves.push_back(p.value);
            }
            return check_gradients(leaves, [=] {
                Rng rng(5);
                model::ForwardOptions opts;
                opts.mode = ops::Mode::kTrain;
                opts.rng = &rng;
                opts.drop_path_max = 0.3;
                return train::bce_with_logits(m->forward(x, opts), y);
            });
        }});
    }
    return cases;
}

}  // namespace

GradReport check_gradients(std::vector<Tensor> leaves, const std::function<Tensor()>& loss_fn, double h,
                           std::int64_t max_coords) {
    for (auto& t : leaves) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    {
        Tape tape;
        TapeGuard guard(tape);
        const auto loss = loss_fn();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (auto& t : leaves) {
        std::vector<double> g(static_cast<std::size_t>(t.numel()), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
        analytic.push_back(std::move(g));
        t.zero_grad();
    }

    double diff2 = 0, a2 = 0, n2 = 0;
    GradReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto data = leaves[li].data();
        const auto n = static_cast<std::int64_t>(data.size());
        const std::int64_t stride = max_coords > 0 && n > max_coords ? (n + max_coords - 1) / max_coords : 1;
        for (std::int64_t i = 0; i < n; i += stride) {
            const Scalar saved = data[static_cast<std::size_t>(i)];
            data[static_cast<std::size_t>(i)] = static_cast<Scalar>(saved + h);
            const double up = evaluate(loss_fn);
            data[static_cast<std::size_t>(i)] = static_cast<Scalar>(saved - h);
            const double down = evaluate(loss_fn);
            data[static_cast<std::size_t>(i)] = saved;
            const double numeric = (up - down) / (2 * h);
            const double a = analytic[li][static_cast<std::size_t>(i)];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            ++report.coords;
        }
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    report.rel_error = std::sqrt(diff2) / denom;
    return report;
}

const std::vector<GradCase>& gradient_cases() {
    static const auto cases = build_cases();
    return cases;
}

}  // namespace asca::testing
