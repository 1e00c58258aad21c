#pragma once

// Differentiable tensor operations. Every forward op has a matching
// *_backward that reads output.grad and accumulates into the grad buffers
// of its inputs and parameters.

#include <aftn/rng.hpp>
#include <aftn/tensor.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace aftn {

enum class Mode { train, eval };

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

struct ConvGeometry {
    std::size_t in_channels, in_h, in_w;
    std::size_t out_channels, out_h, out_w;
    std::size_t k, stride, pad;

    std::size_t patch_len() const { return in_channels * k * k; }
    std::size_t positions() const { return out_h * out_w; }
};

inline std::size_t pooled_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline ConvGeometry conv_geometry(const Tensor& input, const Param& kernels, const Param& bias, std::size_t stride,
                                  std::size_t pad) {
    if (input.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    if (kernels.value.rank() != 4)
        throw DimensionError("conv2d: kernels must be [Cout,Cin,k,k], got " + shape_str(kernels.shape()));
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const std::size_t k = kernels.shape()[2];
    if (kernels.shape()[3] != k) throw DimensionError("conv2d: kernels must be square");
    if (kernels.shape()[1] != input.dim(0))
        throw DimensionError("conv2d: kernel input channels " + std::to_string(kernels.shape()[1]) +
                             " do not match input channels " + std::to_string(input.dim(0)));
    if (bias.shape() != Shape{kernels.shape()[0]}) throw DimensionError("conv2d: bias must be [Cout]");
    if (input.dim(1) + 2 * pad < k || input.dim(2) + 2 * pad < k)
        throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                             shape_str(input.shape()));
    return ConvGeometry{input.dim(0),
                        input.dim(1),
                        input.dim(2),
                        kernels.shape()[0],
                        pooled_extent(input.dim(1), k, stride, pad),
                        pooled_extent(input.dim(2), k, stride, pad),
                        k,
                        stride,
                        pad};
}

/// Unfolds input patches into a [Cin*k*k, Hout*Wout] row-major matrix.
inline void im2col(std::span<const double> input, const ConvGeometry& g, Buffer& col) {
    col.assign(g.patch_len() * g.positions(), 0.0);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = input.data() + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.positions();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    const double* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    double* dst = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ox] = src[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
inline void col2im_add(std::span<const double> col, const ConvGeometry& g, std::span<double> input_grad) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = input_grad.data() + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * g.positions();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

inline bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

} // namespace detail

// ---------------------------------------------------------------- conv2d

/// Cross-correlation of a [Cin,H,W] input with [Cout,Cin,k,k] kernels.
inline Tensor conv2d(const Tensor& input, const Param& kernels, const Param& bias, std::size_t stride,
                     std::size_t pad) {
    const auto g = detail::conv_geometry(input, kernels, bias, stride, pad);
    Tensor out({g.out_channels, g.out_h, g.out_w});
    detail::ConstMatrixMap w(kernels.value.data().data(), static_cast<Eigen::Index>(g.out_channels),
                             static_cast<Eigen::Index>(g.patch_len()));
    detail::MatrixMap y(out.data().data(), static_cast<Eigen::Index>(g.out_channels),
                        static_cast<Eigen::Index>(g.positions()));
    if (detail::is_pointwise(g)) {
        detail::ConstMatrixMap x(input.data().data(), static_cast<Eigen::Index>(g.in_channels),
                                 static_cast<Eigen::Index>(g.positions()));
        y.noalias() = w * x;
    } else {
        Buffer col;
        detail::im2col(input.data(), g, col);
        detail::ConstMatrixMap x(col.data(), static_cast<Eigen::Index>(g.patch_len()),
                                 static_cast<Eigen::Index>(g.positions()));
        y.noalias() = w * x;
    }
    y.colwise() += detail::ConstVectorMap(bias.value.data().data(), static_cast<Eigen::Index>(g.out_channels));
    require_finite(out, "conv2d");
    return out;
}

struct GradTargets {
    bool input = true;
    bool params = true;
};

inline void conv2d_backward(Tensor& input, Param& kernels, Param& bias, const Tensor& output, std::size_t stride,
                            std::size_t pad, GradTargets targets = {}) {
    const auto g = detail::conv_geometry(input, kernels, bias, stride, pad);
    require_shape(output, {g.out_channels, g.out_h, g.out_w}, "conv2d_backward");
    detail::ConstMatrixMap dy(output.grad().data(), static_cast<Eigen::Index>(g.out_channels),
                              static_cast<Eigen::Index>(g.positions()));
    const bool pointwise = detail::is_pointwise(g);
    Buffer col;
    if (targets.params) {
        const double* x_ptr = input.data().data();
        if (!pointwise) {
            detail::im2col(input.data(), g, col);
            x_ptr = col.data();
        }
        detail::ConstMatrixMap x(x_ptr, static_cast<Eigen::Index>(g.patch_len()),
                                 static_cast<Eigen::Index>(g.positions()));
        detail::MatrixMap dw(kernels.value.grad().data(), static_cast<Eigen::Index>(g.out_channels),
                             static_cast<Eigen::Index>(g.patch_len()));
        dw.noalias() += dy * x.transpose();
        detail::VectorMap(bias.value.grad().data(), static_cast<Eigen::Index>(g.out_channels)) += dy.rowwise().sum();
    }
    if (targets.input) {
        detail::ConstMatrixMap w(kernels.value.data().data(), static_cast<Eigen::Index>(g.out_channels),
                                 static_cast<Eigen::Index>(g.patch_len()));
        if (pointwise) {
            detail::MatrixMap dx(input.grad().data(), static_cast<Eigen::Index>(g.in_channels),
                                 static_cast<Eigen::Index>(g.positions()));
            dx.noalias() += w.transpose() * dy;
        } else {
            col.resize(g.patch_len() * g.positions());
            detail::MatrixMap dcol(col.data(), static_cast<Eigen::Index>(g.patch_len()),
                                   static_cast<Eigen::Index>(g.positions()));
            dcol.noalias() = w.transpose() * dy;
            detail::col2im_add(col, g, input.grad());
        }
    }
}

// ------------------------------------------------------------- maxpool2d

/// Max pooling over the last two axes. `argmax` receives, per output
/// element, the flat input index that won (first in row-major order on ties).
inline Tensor maxpool2d(const Tensor& input, std::size_t k, std::size_t stride, std::vector<std::size_t>* argmax = nullptr) {
    if (input.rank() < 2) throw DimensionError("maxpool2d: input needs at least two axes");
    if (k == 0 || stride == 0) throw ConfigError("maxpool2d: kernel and stride must be positive");
    const std::size_t h = input.dim(input.rank() - 2);
    const std::size_t w = input.dim(input.rank() - 1);
    if (k > h || k > w)
        throw DimensionError("maxpool2d: kernel " + std::to_string(k) + " exceeds input " + shape_str(input.shape()));
    const std::size_t oh = (h - k) / stride + 1;
    const std::size_t ow = (w - k) / stride + 1;
    Shape out_shape = input.shape();
    out_shape[out_shape.size() - 2] = oh;
    out_shape[out_shape.size() - 1] = ow;
    Tensor out(out_shape);
    const std::size_t planes = input.size() / (h * w);
    if (argmax) argmax->assign(out.size(), 0);
    const auto in = input.data();
    auto y = out.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = p * h * w + (oy * stride) * w + ox * stride;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::size_t row = p * h * w + (oy * stride + ky) * w + ox * stride;
                    for (std::size_t kx = 0; kx < k; ++kx)
                        if (in[row + kx] > in[best]) best = row + kx;
                }
                const std::size_t o = (p * oh + oy) * ow + ox;
                y[o] = in[best];
                if (argmax) (*argmax)[o] = best;
            }
        }
    }
    return out;
}

inline void maxpool2d_backward(Tensor& input, const Tensor& output, std::span<const std::size_t> argmax) {
    if (argmax.size() != output.size()) throw DimensionError("maxpool2d_backward: argmax/output size mismatch");
    auto dx = input.grad();
    const auto dy = output.grad();
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
}

// ------------------------------------------------------- fully_connected

/// Affine map y = W x + b for a flattened input of length N.
inline Tensor fully_connected(const Tensor& input, const Param& weights, const Param& bias) {
    if (weights.value.rank() != 2) throw DimensionError("fully_connected: weights must be [M,N]");
    const std::size_t m = weights.shape()[0];
    const std::size_t n = weights.shape()[1];
    if (input.size() != n)
        throw DimensionError("fully_connected: input length " + std::to_string(input.size()) + " != " +
                             std::to_string(n));
    if (bias.shape() != Shape{m}) throw DimensionError("fully_connected: bias must be [M]");
    Tensor out({m});
    detail::ConstMatrixMap w(weights.value.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    detail::VectorMap y(out.data().data(), static_cast<Eigen::Index>(m));
    y.noalias() = w * detail::ConstVectorMap(input.data().data(), static_cast<Eigen::Index>(n));
    y += detail::ConstVectorMap(bias.value.data().data(), static_cast<Eigen::Index>(m));
    require_finite(out, "fully_connected");
    return out;
}

inline void fully_connected_backward(Tensor& input, Param& weights, Param& bias, const Tensor& output,
                                     GradTargets targets = {}) {
    const std::size_t m = weights.shape()[0];
    const std::size_t n = weights.shape()[1];
    if (input.size() != n || output.size() != m) throw DimensionError("fully_connected_backward: shape mismatch");
    detail::ConstVectorMap dy(output.grad().data(), static_cast<Eigen::Index>(m));
    if (targets.params) {
        detail::MatrixMap dw(weights.value.grad().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        dw.noalias() += dy * detail::ConstVectorMap(input.data().data(), static_cast<Eigen::Index>(n)).transpose();
        detail::VectorMap(bias.value.grad().data(), static_cast<Eigen::Index>(m)) += dy;
    }
    if (targets.input) {
        detail::ConstMatrixMap w(weights.value.data().data(), static_cast<Eigen::Index>(m),
                                 static_cast<Eigen::Index>(n));
        detail::VectorMap(input.grad().data(), static_cast<Eigen::Index>(n)).noalias() += w.transpose() * dy;
    }
}

// ------------------------------------------------------------ activations

inline Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

/// Subgradient 0 at x = 0.
inline void relu_backward(Tensor& input, const Tensor& output) {
    const auto x = input.data();
    const auto dy = output.grad();
    auto dx = input.grad();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// logistic(x) + 0.5, range (0.5, 1.5). The logistic is held one ulp inside
/// (0, 1) after the shift so saturated inputs stay strictly in range.
inline Tensor sigmoid_biased(const Tensor& input) {
    constexpr double lo = 0x1.0p-53, hi = 1.0 - 0x1.0p-52;
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(logistic(x[i]), lo, hi) + 0.5;
    return out;
}

inline void sigmoid_biased_backward(Tensor& input, const Tensor& output) {
    const auto y = output.data();
    const auto dy = output.grad();
    auto dx = input.grad();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double s = y[i] - 0.5;
        dx[i] += dy[i] * s * (1.0 - s);
    }
}

// ------------------------------------------------------------ batchnorm2d

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels) : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

struct BatchNormCache {
    Mode mode = Mode::eval;
    std::vector<double> normalized; // x-hat, same layout as the input
    std::vector<double> inv_std;    // per channel
};

/// Per-channel normalization of a [B,C,H,W] tensor.
inline Tensor batchnorm2d(const Tensor& input, const Param& gamma, const Param& beta, BatchNormState& state,
                          Mode mode, BatchNormCache& cache) {
    if (input.rank() != 4) throw DimensionError("batchnorm2d: input must be [B,C,H,W]");
    const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw DimensionError("batchnorm2d: gamma/beta must be [C]");
    if (mode == Mode::train && b < 2)
        throw ConfigError("batchnorm2d: train mode needs a batch of at least 2, got " + std::to_string(b));
    Tensor out(input.shape());
    cache.mode = mode;
    cache.normalized.assign(input.size(), 0.0);
    cache.inv_std.assign(c, 0.0);
    const auto x = input.data();
    auto y = out.data();
    const double count = static_cast<double>(b * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0, var = 0.0;
        if (mode == Mode::train) {
            for (std::size_t n = 0; n < b; ++n) {
                const double* p = x.data() + (n * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) mean += p[i];
            }
            mean /= count;
            for (std::size_t n = 0; n < b; ++n) {
                const double* p = x.data() + (n * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) var += (p[i] - mean) * (p[i] - mean);
            }
            const double unbiased = var / (count - 1.0);
            var /= count;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[ch];
            var = state.running_var[ch];
        }
        const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
        cache.inv_std[ch] = inv_std;
        const double g = gamma.value[ch], bt = beta.value[ch];
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t base = (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (x[base + i] - mean) * inv_std;
                cache.normalized[base + i] = xh;
                y[base + i] = g * xh + bt;
            }
        }
    }
    require_finite(out, "batchnorm2d");
    return out;
}

inline void batchnorm2d_backward(Tensor& input, Param& gamma, Param& beta, const Tensor& output,
                                 const BatchNormCache& cache, GradTargets targets = {}) {
    const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    const auto dy = output.grad();
    auto dx = input.grad();
    const double count = static_cast<double>(b * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t base = (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_dy += dy[base + i];
                sum_dy_xh += dy[base + i] * cache.normalized[base + i];
            }
        }
        if (targets.params) {
            gamma.value.grad()[ch] += sum_dy_xh;
            beta.value.grad()[ch] += sum_dy;
        }
        if (!targets.input) continue;
        const double scale = gamma.value[ch] * cache.inv_std[ch];
        for (std::size_t n = 0; n < b; ++n) {
            const std::size_t base = (n * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                if (cache.mode == Mode::train)
                    dx[base + i] += scale * (dy[base + i] - sum_dy / count -
                                             cache.normalized[base + i] * sum_dy_xh / count);
                else
                    dx[base + i] += scale * dy[base + i];
            }
        }
    }
}

// ---------------------------------------------------------------- dropout

/// Inverted dropout. `mask` receives the per-element multiplier (0 or 1/(1-p)).
inline Tensor dropout(const Tensor& input, double p, Mode mode, Rng& rng, std::vector<double>& mask) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0,1)");
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    mask.assign(x.size(), 1.0);
    if (mode == Mode::train && p > 0.0) {
        const double keep_scale = 1.0 / (1.0 - p);
        for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
    return out;
}

inline void dropout_backward(Tensor& input, const Tensor& output, std::span<const double> mask) {
    const auto dy = output.grad();
    auto dx = input.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
}

// -------------------------------------------------------- concat_channels

/// Stacks [C_i,H,W] tensors along the channel axis, in argument order.
inline Tensor concat_channels(std::span<const Tensor* const> inputs) {
    if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
    const Tensor& first = *inputs.front();
    if (first.rank() != 3) throw DimensionError("concat_channels: inputs must be [C,H,W]");
    std::size_t channels = 0;
    for (const Tensor* t : inputs) {
        if (t->rank() != 3 || t->dim(1) != first.dim(1) || t->dim(2) != first.dim(2))
            throw DimensionError("concat_channels: spatial size mismatch " + shape_str(t->shape()) + " vs " +
                                 shape_str(first.shape()));
        channels += t->dim(0);
    }
    Tensor out({channels, first.dim(1), first.dim(2)});
    auto y = out.data();
    std::size_t offset = 0;
    for (const Tensor* t : inputs) {
        std::copy(t->data().begin(), t->data().end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
        offset += t->size();
    }
    return out;
}

inline void concat_channels_backward(std::span<Tensor* const> inputs, const Tensor& output) {
    const auto dy = output.grad();
    std::size_t offset = 0;
    for (Tensor* t : inputs) {
        auto dx = t->grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[offset + i];
        offset += dx.size();
    }
}

// ---------------------------------------------------------- scale_channel

inline Tensor scale_channel(const Tensor& input, const Tensor& weight) {
    if (weight.size() != 1) throw DimensionError("scale_channel: weight must be a scalar");
    Tensor out(input.shape());
    const double w = weight[0];
    const auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * w;
    return out;
}

inline void scale_channel_backward(Tensor& input, Tensor& weight, const Tensor& output) {
    const double w = weight[0];
    const auto x = input.data();
    const auto dy = output.grad();
    auto dx = input.grad();
    double dw = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] += dy[i] * w;
        dw += dy[i] * x[i];
    }
    weight.grad()[0] += dw;
}

// ---------------------------------------------------------------- l1_loss

/// Mean absolute difference over all entries.
inline double l1_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - target[i]);
    const double loss = sum / static_cast<double>(pred.size());
    if (!std::isfinite(loss)) throw NumericError("l1_loss: non-finite loss");
    return loss;
}

inline void l1_loss_backward(Tensor& pred, const Tensor& target, double upstream = 1.0) {
    const double scale = upstream / static_cast<double>(pred.size());
    auto dx = pred.grad();
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        dx[i] += d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
    }
}

} // namespace aftn
