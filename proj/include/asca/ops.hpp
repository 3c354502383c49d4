#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asca/tensor.hpp"

namespace asca::ops {

// ---- linear algebra -------------------------------------------------------

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched product. a: [N x m x k]; b: [N x k x n], or [N x n x k] when
// transpose_b is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// x: [... x in], weight: [out x in], bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);

// x: [N x rest...], b: [rest...]; adds b to every leading slice.
Tensor add_leading(const Tensor& x, const Tensor& b);

// x: [B x ...], factors: B constants (not differentiated).
Tensor scale_rows(const Tensor& x, std::span<const Scalar> factors);

// x: [B x C x H x W], gate: [B x C]; out[b,c,:,:] = x[b,c,:,:] * gate[b,c].
Tensor channel_scale(const Tensor& x, const Tensor& gate);

enum class Activation { kGelu, kSigmoid, kRelu };

Tensor activation(const Tensor& x, Activation kind);
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::kGelu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }
inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }

// Numerically stable softmax along `axis` (negative counts from the end).
Tensor softmax(const Tensor& x, int axis);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- convolution and pooling ----------------------------------------------

// Cross-correlation. x: [B x C x H x W], weight: [O x C/groups x kh x kw],
// bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad,
              int groups = 1);

// "Same" padding: output extent ceil(H / stride); when the total padding is
// odd the extra row/column goes to the bottom/right.
Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int groups = 1);

// Average pooling with partial windows at the bottom/right border averaged
// over their in-bounds cells; output extent is ceil(H / stride).
Tensor avg_pool2d(const Tensor& x, int kernel, int stride);

// [B x C x H x W] -> [B x C]
Tensor global_avg_pool(const Tensor& x);

// ---- normalization --------------------------------------------------------

// Running statistics live in tensors so models can register them as
// checkpointed buffers.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    Scalar momentum = Scalar(0.1);
    Scalar eps = Scalar(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(std::int64_t channels)
        : running_mean(Tensor::zeros({channels})), running_var(Tensor::full({channels}, Scalar(1))) {}
};

enum class Mode { kTrain, kEval };

// x: [B x C x ...]. Train mode normalizes with batch statistics and updates
// `state`; eval mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  Mode mode);

// ---- layout ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
// x[index] along axis 0.
Tensor select_first(const Tensor& x, std::int64_t index);
// Zero padding of a [B x C x H x W] tensor.
Tensor pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right);
// Keeps the top-left [height x width] region.
Tensor crop2d(const Tensor& x, std::int64_t height, std::int64_t width);
// table: [R x T], index: M entries in [0, T) -> [R x M].
Tensor gather_columns(const Tensor& table, const std::vector<std::int64_t>& index);

// ---- misc -----------------------------------------------------------------

// Throws NumericError naming `op` when any value is NaN or infinite.
void check_finite(std::span<const Scalar> values, const char* op);

}  // namespace asca::ops
