#include "asca/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "asca/autograd.hpp"

namespace asca::ops {

using detail::finish;
using detail::grad_buffer;

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using ArrayMap = Eigen::Map<Array>;
using ConstArrayMap = Eigen::Map<const Array>;

// C[m x n] (+)= op(A) * op(B), all row-major. op(A) is m x k, op(B) is k x n.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const Scalar* a,
          const Scalar* b, Scalar* c, bool accumulate) {
    MutMap cm(c, m, n);
    ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
    ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
    if (!accumulate) cm.setZero();
    if (!trans_a && !trans_b) {
        cm.noalias() += am * bm;
    } else if (trans_a && !trans_b) {
        cm.noalias() += am.transpose() * bm;
    } else if (!trans_a && trans_b) {
        cm.noalias() += am * bm.transpose();
    } else {
        cm.noalias() += am.transpose() * bm.transpose();
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
}

void require_rank(const Tensor& x, int rank, const char* op) {
    if (x.ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(x.shape()));
    }
}

int normalize_axis(int axis, int ndim, const char* op) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

Buffer raw(std::int64_t n) { return Buffer(static_cast<std::size_t>(n)); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    auto out = raw(m * n);
    gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
    return finish("matmul", {m, n}, std::move(out), {&a, &b}, [a, b, m, n, k](std::span<const Scalar> g) {
        if (a.requires_grad()) {
            gemm(false, true, m, k, n, g.data(), b.values().data(), grad_buffer(*a.impl()).data(), true);
        }
        if (b.requires_grad()) {
            gemm(true, false, k, n, m, a.values().data(), g.data(), grad_buffer(*b.impl()).data(), true);
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const auto n = transpose_b ? b.dim(1) : b.dim(2);
    const auto bk = transpose_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != batch || bk != k) {
        throw ShapeError("bmm: incompatible operands " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         (transpose_b ? " (transposed)" : ""));
    }
    auto out = raw(batch * m * n);
    for (std::int64_t i = 0; i < batch; ++i) {
        gemm(false, transpose_b, m, n, k, a.values().data() + i * m * k, b.values().data() + i * k * n,
             out.data() + i * m * n, false);
    }
    return finish("bmm", {batch, m, n}, std::move(out), {&a, &b},
                  [a, b, batch, m, n, k, transpose_b](std::span<const Scalar> g) {
                      if (a.requires_grad()) {
                          auto ga = grad_buffer(*a.impl());
                          for (std::int64_t i = 0; i < batch; ++i) {
                              // dA = dC * op(B)^T
                              gemm(false, !transpose_b, m, k, n, g.data() + i * m * n,
                                   b.values().data() + i * k * n, ga.data() + i * m * k, true);
                          }
                      }
                      if (b.requires_grad()) {
                          auto gb = grad_buffer(*b.impl());
                          for (std::int64_t i = 0; i < batch; ++i) {
                              if (transpose_b) {
                                  // B is n x k: dB = dC^T * A
                                  gemm(true, false, n, k, m, g.data() + i * m * n, a.values().data() + i * m * k,
                                       gb.data() + i * k * n, true);
                              } else {
                                  gemm(true, false, k, n, m, a.values().data() + i * m * k, g.data() + i * m * n,
                                       gb.data() + i * k * n, true);
                              }
                          }
                      }
                  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear");
    const auto out_features = weight.dim(0), in_features = weight.dim(1);
    if (x.dim(-1) != in_features) {
        throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_features)) {
        throw ShapeError("linear: bias " + to_string(bias.shape()) + " vs weight " + to_string(weight.shape()));
    }
    const auto rows = x.numel() / in_features;
    auto out = raw(rows * out_features);
    gemm(false, true, rows, out_features, in_features, x.values().data(), weight.values().data(), out.data(),
         false);
    if (bias.defined()) {
        MutMap(out.data(), rows, out_features).rowwise() +=
            Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.values().data(), out_features);
    }
    Shape shape = x.shape();
    shape.back() = out_features;
    return finish("linear", std::move(shape), std::move(out), {&x, &weight, &bias},
                  [x, weight, bias, rows, out_features, in_features](std::span<const Scalar> g) {
                      if (x.requires_grad()) {
                          gemm(false, false, rows, in_features, out_features, g.data(), weight.values().data(),
                               grad_buffer(*x.impl()).data(), true);
                      }
                      if (weight.requires_grad()) {
                          gemm(true, false, out_features, in_features, rows, g.data(), x.values().data(),
                               grad_buffer(*weight.impl()).data(), true);
                      }
                      if (bias.defined() && bias.requires_grad()) {
                          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(grad_buffer(*bias.impl()).data(),
                                                                               out_features) +=
                              ConstMap(g.data(), rows, out_features).colwise().sum();
                      }
                  });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = raw(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return finish("add", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const Scalar> g) {
        for (const Tensor* t : {&a, &b}) {
            if (!t->requires_grad()) continue;
            auto gt = grad_buffer(*t->impl());
            for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = raw(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return finish("sub", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const Scalar> g) {
        if (a.requires_grad()) {
            auto ga = grad_buffer(*a.impl());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto gb = grad_buffer(*b.impl());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = raw(a.numel());
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return finish("mul", a.shape(), std::move(out), {&a, &b}, [a, b](std::span<const Scalar> g) {
        if (a.requires_grad()) {
            auto ga = grad_buffer(*a.impl());
            const auto& bv = b.values();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto gb = grad_buffer(*b.impl());
            const auto& av = a.values();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& x, Scalar factor) {
    auto out = raw(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
    return finish("scale", x.shape(), std::move(out), {&x}, [x, factor](std::span<const Scalar> g) {
        auto gx = grad_buffer(*x.impl());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
}

Tensor add_leading(const Tensor& x, const Tensor& b) {
    const int lead = x.ndim() - b.ndim();
    if (lead < 0 || !std::equal(b.shape().begin(), b.shape().end(), x.shape().begin() + lead)) {
        throw ShapeError("add_leading: " + to_string(b.shape()) + " is not a trailing block of " +
                         to_string(x.shape()));
    }
    const auto block = b.numel();
    const auto count = x.numel() / block;
    auto out = raw(x.numel());
    const auto& xv = x.values();
    const auto& bv = b.values();
    for (std::int64_t n = 0; n < count; ++n) {
        for (std::int64_t i = 0; i < block; ++i) out[n * block + i] = xv[n * block + i] + bv[i];
    }
    return finish("add_leading", x.shape(), std::move(out), {&x, &b},
                  [x, b, block, count](std::span<const Scalar> g) {
                      if (x.requires_grad()) {
                          auto gx = grad_buffer(*x.impl());
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      }
                      if (b.requires_grad()) {
                          auto gb = grad_buffer(*b.impl());
                          for (std::int64_t n = 0; n < count; ++n) {
                              for (std::int64_t i = 0; i < block; ++i) gb[i] += g[n * block + i];
                          }
                      }
                  });
}

Tensor scale_rows(const Tensor& x, std::span<const Scalar> factors) {
    if (x.ndim() < 1 || static_cast<std::int64_t>(factors.size()) != x.dim(0)) {
        throw ShapeError("scale_rows: " + std::to_string(factors.size()) + " factors for " + to_string(x.shape()));
    }
    const auto row = x.numel() / x.dim(0);
    Buffer f(factors.begin(), factors.end());
    auto out = raw(x.numel());
    const auto& xv = x.values();
    for (std::int64_t r = 0; r < x.dim(0); ++r) {
        for (std::int64_t i = 0; i < row; ++i) out[r * row + i] = xv[r * row + i] * f[r];
    }
    return finish("scale_rows", x.shape(), std::move(out), {&x}, [x, f, row](std::span<const Scalar> g) {
        auto gx = grad_buffer(*x.impl());
        for (std::size_t r = 0; r < f.size(); ++r) {
            for (std::int64_t i = 0; i < row; ++i) gx[r * row + i] += g[r * row + i] * f[r];
        }
    });
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
    require_rank(x, 4, "channel_scale");
    require_rank(gate, 2, "channel_scale");
    const auto batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gate.dim(0) != batch || gate.dim(1) != channels) {
        throw ShapeError("channel_scale: gate " + to_string(gate.shape()) + " vs input " + to_string(x.shape()));
    }
    auto out = raw(x.numel());
    const auto& xv = x.values();
    const auto& gv = gate.values();
    for (std::int64_t bc = 0; bc < batch * channels; ++bc) {
        for (std::int64_t i = 0; i < plane; ++i) out[bc * plane + i] = xv[bc * plane + i] * gv[bc];
    }
    return finish("channel_scale", x.shape(), std::move(out), {&x, &gate},
                  [x, gate, batch, channels, plane](std::span<const Scalar> g) {
                      if (x.requires_grad()) {
                          auto gx = grad_buffer(*x.impl());
                          const auto& gv = gate.values();
                          for (std::int64_t bc = 0; bc < batch * channels; ++bc) {
                              for (std::int64_t i = 0; i < plane; ++i) gx[bc * plane + i] += g[bc * plane + i] * gv[bc];
                          }
                      }
                      if (gate.requires_grad()) {
                          auto gg = grad_buffer(*gate.impl());
                          const auto& xv = x.values();
                          for (std::int64_t bc = 0; bc < batch * channels; ++bc) {
                              Scalar acc = 0;
                              for (std::int64_t i = 0; i < plane; ++i) acc += g[bc * plane + i] * xv[bc * plane + i];
                              gg[bc] += acc;
                          }
                      }
                  });
}

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoeff = 0.044715;

inline Scalar sigmoid_value(Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
}

// Tanh approximation of GELU, in fixed-size chunks so the temporaries stay
// in cache.
constexpr std::size_t kChunk = 4096;

void gelu_forward(const Scalar* x, Scalar* out, std::size_t n) {
    const Scalar c = Scalar(kSqrt2OverPi), k = Scalar(kGeluCoeff);
    for (std::size_t i = 0; i < n; i += kChunk) {
        const auto len = static_cast<Eigen::Index>(std::min(kChunk, n - i));
        ConstArrayMap v(x + i, len);
        ArrayMap(out + i, len) = Scalar(0.5) * v * (Scalar(1) + (c * (v + k * v.cube())).tanh());
    }
}

void gelu_backward(const Scalar* x, const Scalar* g, Scalar* gx, std::size_t n) {
    const Scalar c = Scalar(kSqrt2OverPi), k = Scalar(kGeluCoeff);
    Array t(static_cast<Eigen::Index>(kChunk));
    for (std::size_t i = 0; i < n; i += kChunk) {
        const auto len = static_cast<Eigen::Index>(std::min(kChunk, n - i));
        ConstArrayMap v(x + i, len);
        auto th = t.head(len);
        th = (c * (v + k * v.cube())).tanh();
        ArrayMap(gx + i, len) += ConstArrayMap(g + i, len) *
                                 (Scalar(0.5) * (Scalar(1) + th) +
                                  Scalar(0.5) * v * (Scalar(1) - th.square()) * c * (Scalar(1) + Scalar(3) * k * v.square()));
    }
}

}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
    auto out = raw(x.numel());
    const auto& xv = x.values();
    switch (kind) {
        case Activation::kGelu:
            gelu_forward(xv.data(), out.data(), out.size());
            break;
        case Activation::kSigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xv[i]);
            break;
        case Activation::kRelu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : Scalar(0);
            break;
    }
    const char* name = kind == Activation::kGelu ? "gelu" : kind == Activation::kSigmoid ? "sigmoid" : "relu";
    Buffer saved;
    if (kind == Activation::kSigmoid && detail::wants_grad({&x})) saved = out;
    return finish(name, x.shape(), std::move(out), {&x},
                  [x, kind, saved = std::move(saved)](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      const auto& xv = x.values();
                      switch (kind) {
                          case Activation::kGelu:
                              gelu_backward(xv.data(), g.data(), gx.data(), g.size());
                              break;
                          case Activation::kSigmoid:
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  gx[i] += g[i] * saved[i] * (Scalar(1) - saved[i]);
                              }
                              break;
                          case Activation::kRelu:
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  if (xv[i] > 0) gx[i] += g[i];
                              }
                              break;
                      }
                  });
}

Tensor softmax(const Tensor& x, int axis) {
    axis = normalize_axis(axis, x.ndim(), "softmax");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const auto len = x.dim(axis);
    auto out = raw(x.numel());
    const auto& xv = x.values();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            Scalar mx = xv[base];
            for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            Scalar total = 0;
            for (std::int64_t j = 0; j < len; ++j) {
                const Scalar e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            const Scalar inv = Scalar(1) / total;
            for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] *= inv;
        }
    }
    Buffer saved;
    if (detail::wants_grad({&x})) saved = out;
    return finish("softmax", x.shape(), std::move(out), {&x},
                  [x, saved = std::move(saved), outer, inner, len](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t o = 0; o < outer; ++o) {
                          for (std::int64_t in = 0; in < inner; ++in) {
                              const std::int64_t base = o * len * inner + in;
                              Scalar dot = 0;
                              for (std::int64_t j = 0; j < len; ++j) dot += g[base + j * inner] * saved[base + j * inner];
                              for (std::int64_t j = 0; j < len; ++j) {
                                  const auto idx = base + j * inner;
                                  gx[idx] += saved[idx] * (g[idx] - dot);
                              }
                          }
                      }
                  });
}

Tensor sum(const Tensor& x) {
    Scalar total = 0;
    for (Scalar v : x.values()) total += v;
    return finish("sum", {1}, {total}, {&x}, [x](std::span<const Scalar> g) {
        auto gx = grad_buffer(*x.impl());
        for (auto& v : gx) v += g[0];
    });
}

Tensor mean(const Tensor& x) {
    Scalar total = 0;
    for (Scalar v : x.values()) total += v;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(x.numel());
    return finish("mean", {1}, {total * inv}, {&x}, [x, inv](std::span<const Scalar> g) {
        auto gx = grad_buffer(*x.impl());
        for (auto& v : gx) v += g[0] * inv;
    });
}

namespace {

struct ConvGeometry {
    std::int64_t batch, in_ch, height, width;
    std::int64_t out_ch, kh, kw;
    std::int64_t out_h, out_w;
    std::int64_t pad_y, pad_x;  // top and left padding; bottom/right follow from out_h/out_w
    int stride, groups;
    std::int64_t in_per_group() const { return in_ch / groups; }
    std::int64_t out_per_group() const { return out_ch / groups; }
    std::int64_t col_rows() const { return in_per_group() * kh * kw; }
    std::int64_t out_plane() const { return out_h * out_w; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_y == 0 && pad_x == 0 && out_h == height && out_w == width; }
    bool depthwise() const { return groups == in_ch && out_ch == in_ch; }
};

// Unfolds channels [c0, c0 + cg) of one image into cols[cg*kh*kw x out_plane].
void im2col(const ConvGeometry& g, const Scalar* img, std::int64_t c0, Scalar* cols) {
    const std::int64_t cg = g.in_per_group();
    for (std::int64_t c = 0; c < cg; ++c) {
        const Scalar* plane = img + (c0 + c) * g.height * g.width;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                Scalar* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_plane();
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad_y + ky;
                    Scalar* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(dst, dst + g.out_w, Scalar(0));
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad_x + kx;
                        dst[ox] = (ix >= 0 && ix < g.width) ? plane[iy * g.width + ix] : Scalar(0);
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const Scalar* cols, std::int64_t c0, Scalar* img) {
    const std::int64_t cg = g.in_per_group();
    for (std::int64_t c = 0; c < cg; ++c) {
        Scalar* plane = img + (c0 + c) * g.height * g.width;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                const Scalar* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.out_plane();
                for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                    const std::int64_t iy = oy * g.stride - g.pad_y + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                        const std::int64_t ix = ox * g.stride - g.pad_x + kx;
                        if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

// Output columns [lo, hi) whose input column ox * stride - pad + k is in bounds.
std::pair<std::int64_t, std::int64_t> valid_columns(const ConvGeometry& g, std::int64_t k) {
    const std::int64_t off = k - g.pad_x;
    std::int64_t lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    std::int64_t hi = g.width - 1 - off < 0 ? 0 : (g.width - 1 - off) / g.stride + 1;
    hi = std::min(hi, g.out_w);
    return {lo, std::max(lo, hi)};
}

void depthwise_forward(const ConvGeometry& g, const Scalar* x, const Scalar* w, Scalar* y) {
    const auto s = g.stride;
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t c = 0; c < g.in_ch; ++c) {
            const Scalar* plane = x + (b * g.in_ch + c) * g.height * g.width;
            Scalar* out = y + (b * g.out_ch + c) * g.out_plane();
            const Scalar* kernel = w + c * g.kh * g.kw;
            for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                    const Scalar wv = kernel[ky * g.kw + kx];
                    const auto [lo, hi] = valid_columns(g, kx);
                    const std::int64_t off = kx - g.pad_x;
                    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                        const std::int64_t iy = oy * s - g.pad_y + ky;
                        if (iy < 0 || iy >= g.height) continue;
                        const Scalar* src = plane + iy * g.width + off;
                        Scalar* dst = out + oy * g.out_w;
                        if (s == 1) {
                            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox];
                        } else {
                            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] += wv * src[ox * s];
                        }
                    }
                }
            }
        }
    }
}

void depthwise_backward(const ConvGeometry& g, const Scalar* x, const Scalar* w, const Scalar* gy, Scalar* gx,
                        Scalar* gw) {
    const auto s = g.stride;
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t c = 0; c < g.in_ch; ++c) {
            const std::int64_t in_off = (b * g.in_ch + c) * g.height * g.width;
            const Scalar* gout = gy + (b * g.out_ch + c) * g.out_plane();
            const Scalar* kernel = w + c * g.kh * g.kw;
            for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                    const Scalar wv = kernel[ky * g.kw + kx];
                    const auto [lo, hi] = valid_columns(g, kx);
                    const std::int64_t off = kx - g.pad_x;
                    Scalar acc = 0;
                    for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                        const std::int64_t iy = oy * s - g.pad_y + ky;
                        if (iy < 0 || iy >= g.height) continue;
                        const Scalar* go = gout + oy * g.out_w;
                        const std::int64_t row = in_off + iy * g.width + off;
                        if (gx) {
                            Scalar* dst = gx + row;
                            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox * s] += go[ox] * wv;
                        }
                        if (gw) {
                            const Scalar* src = x + row;
                            Scalar part = 0;
                            for (std::int64_t ox = lo; ox < hi; ++ox) part += go[ox] * src[ox * s];
                            acc += part;
                        }
                    }
                    if (gw) gw[c * g.kh * g.kw + ky * g.kw + kx] += acc;
                }
            }
        }
    }
}

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int groups) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    if (stride < 1 || groups < 1) throw ConfigError("conv2d: invalid stride/groups");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.in_ch = x.dim(1);
    g.height = x.dim(2);
    g.width = x.dim(3);
    g.out_ch = weight.dim(0);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = stride;
    g.groups = groups;
    if (g.in_ch % groups != 0 || g.out_ch % groups != 0) {
        throw ConfigError("conv2d: channels " + std::to_string(g.in_ch) + "->" + std::to_string(g.out_ch) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (weight.dim(1) != g.in_per_group()) {
        throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " does not fit input " +
                         to_string(x.shape()) + " with groups " + std::to_string(groups));
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.out_ch)) {
        throw ShapeError("conv2d: bias " + to_string(bias.shape()));
    }
    return g;
}

Tensor conv2d_impl(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g);

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad, int groups) {
    if (pad < 0) throw ConfigError("conv2d: negative padding");
    auto g = conv_geometry(x, weight, bias, stride, groups);
    g.pad_y = g.pad_x = pad;
    const auto span_h = g.height + 2 * pad - g.kh;
    const auto span_w = g.width + 2 * pad - g.kw;
    if (span_h < 0 || span_w < 0) {
        throw ConfigError("conv2d: kernel larger than padded input " + to_string(x.shape()));
    }
    if (span_h % stride != 0 || span_w % stride != 0) {
        throw ConfigError("conv2d: non-integral output extent for input " + to_string(x.shape()) + ", kernel " +
                          std::to_string(g.kh) + "x" + std::to_string(g.kw) + ", stride " + std::to_string(stride) +
                          ", pad " + std::to_string(pad));
    }
    g.out_h = span_h / stride + 1;
    g.out_w = span_w / stride + 1;
    return conv2d_impl(x, weight, bias, g);
}

Tensor conv2d_same(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int groups) {
    auto g = conv_geometry(x, weight, bias, stride, groups);
    g.out_h = (g.height + stride - 1) / stride;
    g.out_w = (g.width + stride - 1) / stride;
    g.pad_y = std::max<std::int64_t>((g.out_h - 1) * stride + g.kh - g.height, 0) / 2;
    g.pad_x = std::max<std::int64_t>((g.out_w - 1) * stride + g.kw - g.width, 0) / 2;
    return conv2d_impl(x, weight, bias, g);
}

namespace {

Tensor conv2d_impl(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& g) {
    const int groups = g.groups;
    auto out = raw(g.batch * g.out_ch * g.out_plane());
    const Scalar* xv = x.values().data();
    const Scalar* wv = weight.values().data();
    if (g.depthwise() && !g.pointwise()) {
        depthwise_forward(g, xv, wv, out.data());
    } else {
        Buffer cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.out_plane()));
        for (std::int64_t b = 0; b < g.batch; ++b) {
            const Scalar* img = xv + b * g.in_ch * g.height * g.width;
            for (int grp = 0; grp < groups; ++grp) {
                const Scalar* col_ptr;
                if (g.pointwise()) {
                    col_ptr = img + grp * g.in_per_group() * g.height * g.width;
                } else {
                    im2col(g, img, grp * g.in_per_group(), cols.data());
                    col_ptr = cols.data();
                }
                gemm(false, false, g.out_per_group(), g.out_plane(), g.col_rows(),
                     wv + grp * g.out_per_group() * g.col_rows(), col_ptr,
                     out.data() + (b * g.out_ch + grp * g.out_per_group()) * g.out_plane(), false);
            }
        }
    }
    if (bias.defined()) {
        const auto& bv = bias.values();
        for (std::int64_t b = 0; b < g.batch; ++b) {
            for (std::int64_t o = 0; o < g.out_ch; ++o) {
                Scalar* dst = out.data() + (b * g.out_ch + o) * g.out_plane();
                for (std::int64_t i = 0; i < g.out_plane(); ++i) dst[i] += bv[o];
            }
        }
    }

    return finish(
        "conv2d", {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {&x, &weight, &bias},
        [x, weight, bias, g](std::span<const Scalar> gy) {
            const Scalar* xv = x.values().data();
            const Scalar* wv = weight.values().data();
            Scalar* gx = x.requires_grad() ? grad_buffer(*x.impl()).data() : nullptr;
            Scalar* gw = weight.requires_grad() ? grad_buffer(*weight.impl()).data() : nullptr;
            if (bias.defined() && bias.requires_grad()) {
                auto gb = grad_buffer(*bias.impl());
                for (std::int64_t b = 0; b < g.batch; ++b) {
                    for (std::int64_t o = 0; o < g.out_ch; ++o) {
                        const Scalar* src = gy.data() + (b * g.out_ch + o) * g.out_plane();
                        Scalar acc = 0;
                        for (std::int64_t i = 0; i < g.out_plane(); ++i) acc += src[i];
                        gb[o] += acc;
                    }
                }
            }
            if (gx == nullptr && gw == nullptr) return;
            if (g.depthwise() && !g.pointwise()) {
                depthwise_backward(g, xv, wv, gy.data(), gx, gw);
                return;
            }
            Buffer cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * g.out_plane()));
            Buffer dcols(static_cast<std::size_t>(g.col_rows() * g.out_plane()));
            for (std::int64_t b = 0; b < g.batch; ++b) {
                const Scalar* img = xv + b * g.in_ch * g.height * g.width;
                for (int grp = 0; grp < g.groups; ++grp) {
                    const Scalar* gout = gy.data() + (b * g.out_ch + grp * g.out_per_group()) * g.out_plane();
                    const Scalar* wg = wv + grp * g.out_per_group() * g.col_rows();
                    if (gw) {
                        const Scalar* col_ptr;
                        if (g.pointwise()) {
                            col_ptr = img + grp * g.in_per_group() * g.height * g.width;
                        } else {
                            im2col(g, img, grp * g.in_per_group(), cols.data());
                            col_ptr = cols.data();
                        }
                        gemm(false, true, g.out_per_group(), g.col_rows(), g.out_plane(), gout, col_ptr,
                             gw + grp * g.out_per_group() * g.col_rows(), true);
                    }
                    if (gx) {
                        Scalar* gimg = gx + b * g.in_ch * g.height * g.width;
                        if (g.pointwise()) {
                            gemm(true, false, g.col_rows(), g.out_plane(), g.out_per_group(), wg, gout,
                                 gimg + grp * g.in_per_group() * g.height * g.width, true);
                        } else {
                            gemm(true, false, g.col_rows(), g.out_plane(), g.out_per_group(), wg, gout,
                                 dcols.data(), false);
                            col2im_add(g, dcols.data(), grp * g.in_per_group(), gimg);
                        }
                    }
                }
            }
        });
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, int kernel, int stride) {
    require_rank(x, 4, "avg_pool2d");
    if (kernel < 1 || stride < 1) throw ConfigError("avg_pool2d: kernel and stride must be positive");
    const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
    auto out = raw(planes * oh * ow);
    const auto& xv = x.values();
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
            const auto y0 = oy * stride, y1 = std::min(h, y0 + kernel);
            for (std::int64_t ox = 0; ox < ow; ++ox) {
                const auto x0 = ox * stride, x1 = std::min(w, x0 + kernel);
                Scalar acc = 0;
                for (auto y = y0; y < y1; ++y) {
                    for (auto xx = x0; xx < x1; ++xx) acc += xv[(p * h + y) * w + xx];
                }
                out[(p * oh + oy) * ow + ox] = acc / static_cast<Scalar>((y1 - y0) * (x1 - x0));
            }
        }
    }
    return finish("avg_pool2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                  [x, planes, h, w, oh, ow, kernel, stride](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t p = 0; p < planes; ++p) {
                          for (std::int64_t oy = 0; oy < oh; ++oy) {
                              const auto y0 = oy * stride, y1 = std::min(h, y0 + kernel);
                              for (std::int64_t ox = 0; ox < ow; ++ox) {
                                  const auto x0 = ox * stride, x1 = std::min(w, x0 + kernel);
                                  const Scalar share =
                                      g[(p * oh + oy) * ow + ox] / static_cast<Scalar>((y1 - y0) * (x1 - x0));
                                  for (auto y = y0; y < y1; ++y) {
                                      for (auto xx = x0; xx < x1; ++xx) gx[(p * h + y) * w + xx] += share;
                                  }
                              }
                          }
                      }
                  });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const auto bc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    auto out = raw(bc);
    const auto& xv = x.values();
    const Scalar inv = Scalar(1) / static_cast<Scalar>(plane);
    for (std::int64_t i = 0; i < bc; ++i) {
        Scalar acc = 0;
        for (std::int64_t j = 0; j < plane; ++j) acc += xv[i * plane + j];
        out[i] = acc * inv;
    }
    return finish("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), {&x},
                  [x, bc, plane, inv](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t i = 0; i < bc; ++i) {
                          const Scalar share = g[i] * inv;
                          for (std::int64_t j = 0; j < plane; ++j) gx[i * plane + j] += share;
                      }
                  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
    if (x.ndim() < 2) throw ShapeError("batch_norm: expected [B x C x ...], got " + to_string(x.shape()));
    const auto batch = x.dim(0), channels = x.dim(1);
    const auto inner = x.numel() / (batch * channels);
    if (gamma.numel() != channels || beta.numel() != channels ||
        !state.running_mean.defined() || state.running_mean.numel() != channels ||
        state.running_var.numel() != channels) {
        throw ShapeError("batch_norm: affine/state size does not match " + std::to_string(channels) + " channels");
    }
    if (mode == Mode::kTrain && batch < 2) {
        throw ContractError("batch_norm: degenerate batch of size " + std::to_string(batch) + " in train mode");
    }
    const auto count = batch * inner;
    Buffer mean_c(static_cast<std::size_t>(channels));
    Buffer invstd(static_cast<std::size_t>(channels));
    const auto& xv = x.values();
    auto plane = [inner](const Scalar* base, std::int64_t idx) { return ConstArrayMap(base + idx * inner, inner); };
    auto run_mean = state.running_mean.data();
    auto run_var = state.running_var.data();
    if (mode == Mode::kTrain) {
        for (std::int64_t c = 0; c < channels; ++c) {
            double s = 0;
            for (std::int64_t b = 0; b < batch; ++b) s += plane(xv.data(), b * channels + c).sum();
            const double mu = s / static_cast<double>(count);
            double ss = 0;
            for (std::int64_t b = 0; b < batch; ++b) {
                ss += (plane(xv.data(), b * channels + c) - static_cast<Scalar>(mu)).square().sum();
            }
            const double var = ss / static_cast<double>(count);
            mean_c[c] = static_cast<Scalar>(mu);
            invstd[c] = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
            const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
            run_mean[c] = (1 - state.momentum) * run_mean[c] + state.momentum * static_cast<Scalar>(mu);
            run_var[c] = (1 - state.momentum) * run_var[c] + state.momentum * static_cast<Scalar>(unbiased);
        }
    } else {
        for (std::int64_t c = 0; c < channels; ++c) {
            mean_c[c] = run_mean[c];
            invstd[c] = Scalar(1) / std::sqrt(run_var[c] + state.eps);
        }
    }
    auto out = raw(x.numel());
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const auto idx = b * channels + c;
            ArrayMap(out.data() + idx * inner, inner) =
                (plane(xv.data(), idx) - mean_c[c]) * (gv[c] * invstd[c]) + bv[c];
        }
    }
    const bool train = mode == Mode::kTrain;
    // The backward pass recomputes xhat = (x - mean) * invstd from x.
    return finish("batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                  [x, gamma, beta, mean_c = std::move(mean_c), invstd = std::move(invstd), batch, channels, inner,
                   count, train, plane](std::span<const Scalar> g) {
                      const Scalar* xv = x.values().data();
                      std::vector<double> sum_g(static_cast<std::size_t>(channels), 0.0);
                      std::vector<double> sum_gx(static_cast<std::size_t>(channels), 0.0);
                      for (std::int64_t b = 0; b < batch; ++b) {
                          for (std::int64_t c = 0; c < channels; ++c) {
                              const auto idx = b * channels + c;
                              const auto gp = plane(g.data(), idx);
                              sum_g[c] += gp.sum();
                              sum_gx[c] += (gp * (plane(xv, idx) - mean_c[c])).sum() * invstd[c];
                          }
                      }
                      if (gamma.requires_grad()) {
                          auto gg = grad_buffer(*gamma.impl());
                          for (std::int64_t c = 0; c < channels; ++c) gg[c] += static_cast<Scalar>(sum_gx[c]);
                      }
                      if (beta.requires_grad()) {
                          auto gb = grad_buffer(*beta.impl());
                          for (std::int64_t c = 0; c < channels; ++c) gb[c] += static_cast<Scalar>(sum_g[c]);
                      }
                      if (!x.requires_grad()) return;
                      auto gx = grad_buffer(*x.impl());
                      const auto& gv = gamma.values();
                      const Scalar n = static_cast<Scalar>(count);
                      for (std::int64_t b = 0; b < batch; ++b) {
                          for (std::int64_t c = 0; c < channels; ++c) {
                              const auto idx = b * channels + c;
                              const Scalar k = gv[c] * invstd[c];
                              ArrayMap dst(gx.data() + idx * inner, inner);
                              if (train) {
                                  const Scalar mg = static_cast<Scalar>(sum_g[c]) / n;
                                  const Scalar mgx = static_cast<Scalar>(sum_gx[c]) / n;
                                  dst += k * (plane(g.data(), idx) - mg -
                                              (plane(xv, idx) - mean_c[c]) * (invstd[c] * mgx));
                              } else {
                                  dst += k * plane(g.data(), idx);
                              }
                          }
                      }
                  });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (asca::numel(shape) != x.numel()) {
        throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    return finish("reshape", std::move(shape), x.values(), {&x}, [x](std::span<const Scalar> g) {
        auto gx = grad_buffer(*x.impl());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
    const int n = x.ndim();
    if (static_cast<int>(order.size()) != n) throw ShapeError("permute: order rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int a : order) {
        if (a < 0 || a >= n || seen[a]) throw ShapeError("permute: invalid axis order");
        seen[a] = true;
    }
    Shape out_shape(static_cast<std::size_t>(n));
    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(n));
    std::int64_t s = 1;
    for (int i = n - 1; i >= 0; --i) {
        in_strides[i] = s;
        s *= x.dim(i);
    }
    // Strides of the source, visited in output-axis order.
    std::vector<std::int64_t> src_strides(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out_shape[i] = x.dim(order[i]);
        src_strides[i] = in_strides[order[i]];
    }
    // Maps output flat index -> source flat index.
    std::vector<std::int64_t> src_index(static_cast<std::size_t>(x.numel()));
    {
        std::vector<std::int64_t> counter(static_cast<std::size_t>(n), 0);
        std::int64_t offset = 0;
        for (std::int64_t flat = 0; flat < x.numel(); ++flat) {
            src_index[flat] = offset;
            for (int ax = n - 1; ax >= 0; --ax) {
                offset += src_strides[ax];
                if (++counter[ax] < out_shape[ax]) break;
                offset -= src_strides[ax] * out_shape[ax];
                counter[ax] = 0;
            }
        }
    }
    auto out = raw(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src_index[i]];
    return finish("permute", std::move(out_shape), std::move(out), {&x},
                  [x, src_index = std::move(src_index)](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::size_t i = 0; i < g.size(); ++i) gx[src_index[i]] += g[i];
                  });
}

Tensor select_first(const Tensor& x, std::int64_t index) {
    if (x.ndim() < 2 || index < 0 || index >= x.dim(0)) {
        throw ShapeError("select_first: index " + std::to_string(index) + " for " + to_string(x.shape()));
    }
    const auto block = x.numel() / x.dim(0);
    Shape shape(x.shape().begin() + 1, x.shape().end());
    Buffer out(x.values().begin() + index * block, x.values().begin() + (index + 1) * block);
    return finish("select_first", std::move(shape), std::move(out), {&x},
                  [x, index, block](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t i = 0; i < block; ++i) gx[index * block + i] += g[i];
                  });
}

Tensor pad2d(const Tensor& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right) {
    require_rank(x, 4, "pad2d");
    if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("pad2d: negative padding");
    const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto oh = h + top + bottom, ow = w + left + right;
    auto out = raw(planes * oh * ow);
    const auto& xv = x.values();
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < h; ++y) {
            std::copy_n(xv.data() + (p * h + y) * w, w, out.data() + (p * oh + y + top) * ow + left);
        }
    }
    return finish("pad2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                  [x, planes, h, w, oh, ow, top, left](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t p = 0; p < planes; ++p) {
                          for (std::int64_t y = 0; y < h; ++y) {
                              const Scalar* src = g.data() + (p * oh + y + top) * ow + left;
                              for (std::int64_t i = 0; i < w; ++i) gx[(p * h + y) * w + i] += src[i];
                          }
                      }
                  });
}

Tensor crop2d(const Tensor& x, std::int64_t height, std::int64_t width) {
    require_rank(x, 4, "crop2d");
    const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (height < 1 || width < 1 || height > h || width > w) {
        throw ShapeError("crop2d: cannot crop " + to_string(x.shape()) + " to " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    auto out = raw(planes * height * width);
    const auto& xv = x.values();
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < height; ++y) {
            std::copy_n(xv.data() + (p * h + y) * w, width, out.data() + (p * height + y) * width);
        }
    }
    return finish("crop2d", {x.dim(0), x.dim(1), height, width}, std::move(out), {&x},
                  [x, planes, h, w, height, width](std::span<const Scalar> g) {
                      auto gx = grad_buffer(*x.impl());
                      for (std::int64_t p = 0; p < planes; ++p) {
                          for (std::int64_t y = 0; y < height; ++y) {
                              for (std::int64_t i = 0; i < width; ++i) {
                                  gx[(p * h + y) * w + i] += g[(p * height + y) * width + i];
                              }
                          }
                      }
                  });
}

Tensor gather_columns(const Tensor& table, const std::vector<std::int64_t>& index) {
    require_rank(table, 2, "gather_columns");
    const auto rows = table.dim(0), cols = table.dim(1);
    const auto m = static_cast<std::int64_t>(index.size());
    if (m == 0) throw ShapeError("gather_columns: empty index");
    for (auto i : index) {
        if (i < 0 || i >= cols) throw ShapeError("gather_columns: index " + std::to_string(i) + " out of range");
    }
    auto out = raw(rows * m);
    const auto& tv = table.values();
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < m; ++j) out[r * m + j] = tv[r * cols + index[j]];
    }
    return finish("gather_columns", {rows, m}, std::move(out), {&table},
                  [table, index, rows, cols, m](std::span<const Scalar> g) {
                      auto gt = grad_buffer(*table.impl());
                      for (std::int64_t r = 0; r < rows; ++r) {
                          for (std::int64_t j = 0; j < m; ++j) gt[r * cols + index[j]] += g[r * m + j];
                      }
                  });
}

}  // namespace asca::ops
