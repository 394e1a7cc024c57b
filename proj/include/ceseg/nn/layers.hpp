#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ceseg/errors.hpp"
#include "ceseg/nn/parameter.hpp"
#include "ceseg/tensor.hpp"

namespace ceseg::nn {

/**
 * Square-kernel 2D convolution, stride 1, zero "same" padding.
 *
 * Lowered to im2col + GEMM. The stack is processed in column chunks so the
 * im2col buffer stays bounded for long stacks.
 */
namespace detail {

/// Sum of f(i) over [0, n) in double with eight independent accumulators.
template <typename F>
double lane_sum(std::size_t n, F&& f) {
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += f(i + j);
    for (; i < n; ++i) acc[0] += f(i);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

}  // namespace detail

template <typename T>
class Conv2d {
public:
    using RowMatrix = typename Tensor<T>::RowMatrix;

    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels,
           std::size_t kernel, std::mt19937_64& rng)
        : in_(in_channels), out_(out_channels), kernel_(kernel),
          weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
          bias_(name + ".bias", {out_channels}) {
        if (kernel % 2 == 0) throw ConfigError("Conv2d: kernel size must be odd");
        // He-normal for ReLU networks.
        fill_normal(weight_.value, std::sqrt(2.0 / double(in_channels * kernel * kernel)), rng);
    }

    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }

    Tensor<T> infer(const Tensor<T>& x) const {
        check_input(x);
        const Shape& s = x.shape();
        Tensor<T> y(out_, s.count, s.height, s.width);
        auto w = weight_matrix();
        if (kernel_ == 1) {
            y.matrix().noalias() = w * x.matrix();
        } else {
            Padded pad(s, kernel_);
            RowMatrix xpad, col, ypad;
            const RowMatrix wt = output_side() ? tap_major_weight() : RowMatrix();
            for_each_chunk(pad, s.count, [&](std::size_t n0, std::size_t n1) {
                pad.pack(x, n0, n1, xpad);
                if (output_side()) {
                    // Per-tap responses, then shifted sum: y[p] = sum_t (W_t x)[p + off_t].
                    col.noalias() = wt * xpad;
                    shifted_sum(pad, col, n1 - n0, ypad);
                } else {
                    im2col(pad, xpad, n1 - n0, col);
                    ypad.noalias() = w * col;
                }
                pad.unpack(ypad, n0, n1, y);
            });
        }
        for (std::size_t c = 0; c < out_; ++c) {
            const T b = bias_.value[c];
            for (auto& v : y.channel(c)) v += b;
        }
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        input_ = x;
        return infer(x);
    }

    /// Accumulates weight/bias gradients and returns dL/dx.
    Tensor<T> backward(const Tensor<T>& dy) {
        const Shape& s = input_.shape();
        if (dy.shape() != Shape{out_, s.count, s.height, s.width}) {
            throw InputError("Conv2d::backward: gradient shape " + dy.shape().str());
        }
        Tensor<T> dx(s);
        auto w = weight_matrix();
        Eigen::Map<RowMatrix> dw(weight_.grad.data(), Eigen::Index(out_), Eigen::Index(in_ * kernel_ * kernel_));
        if (kernel_ == 1) {
            dw.noalias() += dy.matrix() * input_.matrix().transpose();
            dx.matrix().noalias() = w.transpose() * dy.matrix();
        } else {
            Padded pad(s, kernel_);
            RowMatrix xpad, col, dypad, dcol, dxpad;
            const RowMatrix wt = output_side() ? tap_major_weight() : RowMatrix();
            RowMatrix dwt = output_side() ? RowMatrix::Zero(wt.rows(), wt.cols()) : RowMatrix();
            for_each_chunk(pad, s.count, [&](std::size_t n0, std::size_t n1) {
                const std::size_t cols = (n1 - n0) * pad.plane;
                pad.pack(input_, n0, n1, xpad);
                if (output_side()) {
                    // Shifted copies of dy: row block t holds dy[q - off_t].
                    pad.pack(dy, n0, n1, dypad);
                    dy_shifts(pad, dypad, n1 - n0, dcol);
                    const auto x_inner = xpad.middleCols(Eigen::Index(pad.margin), Eigen::Index(cols));
                    dwt.noalias() += dcol * x_inner.transpose();
                    dxpad.noalias() = wt.transpose() * dcol;
                    pad.unpack(dxpad, n0, n1, dx);
                } else {
                    im2col(pad, xpad, n1 - n0, col);
                    pad.pack(dy, n0, n1, dypad, false);
                    dw.noalias() += dypad * col.transpose();
                    dcol.noalias() = w.transpose() * dypad;
                    col2im(pad, dcol, n1 - n0, dxpad);
                    pad.unpack(dxpad, n0, n1, dx, pad.margin);
                }
            });
            if (output_side()) {
                const std::size_t taps = kernel_ * kernel_;
                for (std::size_t t = 0; t < taps; ++t)
                    for (std::size_t co = 0; co < out_; ++co)
                        for (std::size_t ci = 0; ci < in_; ++ci)
                            dw(Eigen::Index(co), Eigen::Index(ci * taps + t)) +=
                                dwt(Eigen::Index(t * out_ + co), Eigen::Index(ci));
            }
        }
        for (std::size_t c = 0; c < out_; ++c) {
            const auto g = dy.channel(c);
            bias_.grad[c] += T(detail::lane_sum(g.size(), [&](std::size_t i) { return double(g[i]); }));
        }
        return dx;
    }

    void visit(const ParamVisitor<T>& f) {
        f(weight_);
        f(bias_);
    }

private:
    static constexpr std::size_t kChunkColumns = 8192;

    /**
     * Zero-padded flat layout: each slice becomes a (H+2p) x (W+2p) plane and
     * planes are laid end to end, with `margin` extra zeros on both sides. A
     * kernel tap is then a constant offset into this row, so im2col is one
     * contiguous copy per (channel, tap).
     */
    struct Padded {
        std::size_t H, W, pad, PH, PW, plane, margin;
        Padded(const Shape& s, std::size_t kernel)
            : H(s.height), W(s.width), pad(kernel / 2), PH(s.height + 2 * pad), PW(s.width + 2 * pad),
              plane(PH * PW), margin(pad * PW + pad) {}

        std::ptrdiff_t offset(std::size_t ky, std::size_t kx) const {
            return (std::ptrdiff_t(ky) - std::ptrdiff_t(pad)) * std::ptrdiff_t(PW) + std::ptrdiff_t(kx) -
                   std::ptrdiff_t(pad);
        }

        /// Slices [n0, n1) of every channel of t into `out` (C x cols [+ 2 margin]).
        void pack(const Tensor<T>& t, std::size_t n0, std::size_t n1, RowMatrix& out, bool with_margin = true) const {
            const std::size_t m = with_margin ? margin : 0;
            const std::size_t cols = (n1 - n0) * plane + 2 * m;
            out.setZero(Eigen::Index(t.channels()), Eigen::Index(cols));
            for (std::size_t c = 0; c < t.channels(); ++c) {
                T* row = out.data() + c * cols + m;
                for (std::size_t n = n0; n < n1; ++n) {
                    const T* src = t.data() + t.index(c, n, 0, 0);
                    T* dst = row + (n - n0) * plane + pad * PW + pad;
                    for (std::size_t y = 0; y < H; ++y) std::copy(src + y * W, src + (y + 1) * W, dst + y * PW);
                }
            }
        }

        /// Interior of a padded matrix (whose rows start `m` zeros early) back into slices [n0, n1) of t.
        void unpack(const RowMatrix& in, std::size_t n0, std::size_t n1, Tensor<T>& t, std::size_t m = 0) const {
            const std::size_t cols = std::size_t(in.cols());
            for (std::size_t c = 0; c < t.channels(); ++c) {
                const T* row = in.data() + c * cols + m;
                for (std::size_t n = n0; n < n1; ++n) {
                    const T* src = row + (n - n0) * plane + pad * PW + pad;
                    T* dst = t.data() + t.index(c, n, 0, 0);
                    for (std::size_t y = 0; y < H; ++y) std::copy(src + y * PW, src + y * PW + W, dst + y * W);
                }
            }
        }
    };

    Eigen::Map<const RowMatrix> weight_matrix() const {
        return Eigen::Map<const RowMatrix>(weight_.value.data(), Eigen::Index(out_),
                                           Eigen::Index(in_ * kernel_ * kernel_));
    }

    void check_input(const Tensor<T>& x) const {
        if (x.channels() != in_) {
            throw ConfigError("Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                              " input channels, got " + std::to_string(x.channels()));
        }
    }

    template <typename F>
    static void for_each_chunk(const Padded& pad, std::size_t count, F&& f) {
        const std::size_t per = std::max<std::size_t>(1, kChunkColumns / pad.plane);
        for (std::size_t n0 = 0; n0 < count; n0 += per) f(n0, std::min(count, n0 + per));
    }

    /// Narrowing convs run the GEMM on the output side, where rows are fewer.
    bool output_side() const noexcept { return in_ > out_; }

    /// Weights as (tap, out) x in.
    RowMatrix tap_major_weight() const {
        const std::size_t taps = kernel_ * kernel_;
        RowMatrix wt(Eigen::Index(taps * out_), Eigen::Index(in_));
        for (std::size_t t = 0; t < taps; ++t)
            for (std::size_t co = 0; co < out_; ++co)
                for (std::size_t ci = 0; ci < in_; ++ci)
                    wt(Eigen::Index(t * out_ + co), Eigen::Index(ci)) = weight_.value[(co * in_ + ci) * taps + t];
        return wt;
    }

    void shifted_sum(const Padded& pad, const RowMatrix& z, std::size_t slices, RowMatrix& ypad) const {
        const std::size_t K = kernel_, cols = slices * pad.plane, stride = std::size_t(z.cols());
        ypad.setZero(Eigen::Index(out_), Eigen::Index(cols));
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
                const std::size_t t = ky * K + kx;
                for (std::size_t co = 0; co < out_; ++co) {
                    const T* src = z.data() + (t * out_ + co) * stride + std::ptrdiff_t(pad.margin) + pad.offset(ky, kx);
                    T* dst = ypad.data() + co * cols;
                    for (std::size_t i = 0; i < cols; ++i) dst[i] += src[i];
                }
            }
    }

    void dy_shifts(const Padded& pad, const RowMatrix& dypad, std::size_t slices, RowMatrix& out) const {
        const std::size_t K = kernel_, cols = slices * pad.plane, stride = std::size_t(dypad.cols());
        out.resize(Eigen::Index(K * K * out_), Eigen::Index(cols));
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
                const std::size_t t = ky * K + kx;
                for (std::size_t co = 0; co < out_; ++co) {
                    const T* src = dypad.data() + co * stride + std::ptrdiff_t(pad.margin) - pad.offset(ky, kx);
                    std::copy(src, src + cols, out.data() + (t * out_ + co) * cols);
                }
            }
    }

    void im2col(const Padded& pad, const RowMatrix& xpad, std::size_t slices, RowMatrix& col) const {
        const std::size_t K = kernel_, cols = slices * pad.plane, stride = std::size_t(xpad.cols());
        col.resize(Eigen::Index(in_ * K * K), Eigen::Index(cols));
        for (std::size_t ci = 0; ci < in_; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T* src = xpad.data() + ci * stride + std::ptrdiff_t(pad.margin) + pad.offset(ky, kx);
                    std::copy(src, src + cols, col.data() + ((ci * K + ky) * K + kx) * cols);
                }
    }

    void col2im(const Padded& pad, const RowMatrix& dcol, std::size_t slices, RowMatrix& dxpad) const {
        const std::size_t K = kernel_, cols = slices * pad.plane, stride = cols + 2 * pad.margin;
        dxpad.setZero(Eigen::Index(in_), Eigen::Index(stride));
        for (std::size_t ci = 0; ci < in_; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky)
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T* src = dcol.data() + ((ci * K + ky) * K + kx) * cols;
                    T* dst = dxpad.data() + ci * stride + std::ptrdiff_t(pad.margin) + pad.offset(ky, kx);
                    for (std::size_t i = 0; i < cols; ++i) dst[i] += src[i];
                }
    }

    std::size_t in_ = 0, out_ = 0, kernel_ = 1;
    Parameter<T> weight_;
    Parameter<T> bias_;
    Tensor<T> input_;
};

/**
 * Per-channel batch normalization. In training the statistics of the current
 * stack are used and the running estimates are updated with `momentum`
 * (running variance uses the unbiased estimate); inference uses the running
 * estimates.
 */

template <typename T>
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
        : channels_(channels), momentum_(momentum), eps_(eps),
          gamma_(name + ".gamma", {channels}, true, T(1)),
          beta_(name + ".beta", {channels}, true, T(0)),
          running_mean_(name + ".running_mean", {channels}, false, T(0)),
          running_var_(name + ".running_var", {channels}, false, T(1)) {}

    Tensor<T> infer(const Tensor<T>& x) const {
        check_input(x);
        Tensor<T> y(x.shape());
        for (std::size_t c = 0; c < channels_; ++c) {
            const T inv = T(1) / std::sqrt(running_var_.value[c] + T(eps_));
            const T g = gamma_.value[c] * inv;
            const T b = beta_.value[c] - running_mean_.value[c] * g;
            auto src = x.channel(c);
            auto dst = y.channel(c);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] * g + b;
        }
        return y;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        check_input(x);
        const std::size_t m = x.shape().channel_size();
        xhat_ = Tensor<T>(x.shape());
        inv_std_.assign(channels_, T(0));
        Tensor<T> y(x.shape());
        for (std::size_t c = 0; c < channels_; ++c) {
            auto src = x.channel(c);
            const double mean = detail::lane_sum(m, [&](std::size_t i) { return double(src[i]); }) / double(m);
            const double var = detail::lane_sum(m, [&](std::size_t i) {
                                   const double d = double(src[i]) - mean;
                                   return d * d;
                               }) / double(m);
            const T inv = T(1.0 / std::sqrt(var + eps_));
            inv_std_[c] = inv;
            auto xh = xhat_.channel(c);
            auto dst = y.channel(c);
            const T mu = T(mean), gamma = gamma_.value[c], beta = beta_.value[c];
            for (std::size_t i = 0; i < m; ++i) {
                xh[i] = (src[i] - mu) * inv;
                dst[i] = gamma * xh[i] + beta;
            }
            const double unbiased = m > 1 ? var * double(m) / double(m - 1) : var;
            running_mean_.value[c] = T((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
            running_var_.value[c] = T((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) {
        const std::size_t m = xhat_.shape().channel_size();
        Tensor<T> dx(xhat_.shape());
        for (std::size_t c = 0; c < channels_; ++c) {
            auto g = dy.channel(c);
            auto xh = xhat_.channel(c);
            const double sum_g = detail::lane_sum(m, [&](std::size_t i) { return double(g[i]); });
            const double sum_gx = detail::lane_sum(m, [&](std::size_t i) { return double(g[i]) * double(xh[i]); });
            gamma_.grad[c] += T(sum_gx);
            beta_.grad[c] += T(sum_g);
            const T scale = gamma_.value[c] * inv_std_[c] / T(m);
            const T mg = T(sum_g), mgx = T(sum_gx);
            auto out = dx.channel(c);
            for (std::size_t i = 0; i < m; ++i) out[i] = scale * (T(m) * g[i] - mg - xh[i] * mgx);
        }
        return dx;
    }

    void visit(const ParamVisitor<T>& f) {
        f(gamma_);
        f(beta_);
        f(running_mean_);
        f(running_var_);
    }

private:
    void check_input(const Tensor<T>& x) const {
        if (x.channels() != channels_) throw ConfigError("BatchNorm2d " + gamma_.name + ": channel mismatch");
    }

    std::size_t channels_ = 0;
    double momentum_ = 0.1, eps_ = 1e-5;
    Parameter<T> gamma_, beta_, running_mean_, running_var_;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
Tensor<T> relu(Tensor<T> x) {
    for (auto& v : x.values()) v = v > T(0) ? v : T(0);
    return x;
}

/// dL/dx of ReLU given its output (y > 0 iff x > 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
    for (std::size_t i = 0; i < dy.size(); ++i)
        if (!(y[i] > T(0))) dy[i] = T(0);
    return dy;
}

template <typename T>
T sigmoid(T x) {
    // Split on sign so exp never overflows.
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
    for (auto& v : x.values()) v = sigmoid(v);
    return x;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, Tensor<T> dy) {
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= y[i] * (T(1) - y[i]);
    return dy;
}

/// 2x2 max pooling, stride 2. Ties go to the first element in row-major order.
template <typename T>
class MaxPool2 {
public:
    Tensor<T> infer(const Tensor<T>& x) const {
        std::vector<std::uint32_t> unused;
        return pool(x, unused);
    }
    Tensor<T> forward(const Tensor<T>& x) {
        in_shape_ = x.shape();
        return pool(x, argmax_);
    }
    Tensor<T> backward(const Tensor<T>& dy) const {
        Tensor<T> dx(in_shape_);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
        return dx;
    }

    /// Appends the selected input index of every window of the last forward().
    void append_regime(std::vector<std::int32_t>& out) const { out.insert(out.end(), argmax_.begin(), argmax_.end()); }

private:
    static Tensor<T> pool(const Tensor<T>& x, std::vector<std::uint32_t>& argmax) {
        if (x.height() % 2 || x.width() % 2) throw InputError("MaxPool2: odd spatial size " + x.shape().str());
        const std::size_t H = x.height() / 2, W = x.width() / 2;
        Tensor<T> y(x.channels(), x.count(), H, W);
        argmax.resize(y.size());
        for (std::size_t c = 0; c < x.channels(); ++c)
            for (std::size_t n = 0; n < x.count(); ++n)
                for (std::size_t yy = 0; yy < H; ++yy)
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        std::size_t best = x.index(c, n, 2 * yy, 2 * xx);
                        for (std::size_t d : {x.index(c, n, 2 * yy, 2 * xx + 1), x.index(c, n, 2 * yy + 1, 2 * xx),
                                              x.index(c, n, 2 * yy + 1, 2 * xx + 1)})
                            if (x[d] > x[best]) best = d;
                        const std::size_t o = y.index(c, n, yy, xx);
                        y[o] = x[best];
                        argmax[o] = std::uint32_t(best);
                    }
        return y;
    }

    Shape in_shape_{};
    std::vector<std::uint32_t> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
    const std::size_t H = x.height() * 2, W = x.width() * 2;
    Tensor<T> y(x.channels(), x.count(), H, W);
    for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t n = 0; n < x.count(); ++n)
            for (std::size_t yy = 0; yy < H; ++yy)
                for (std::size_t xx = 0; xx < W; ++xx) y.at(c, n, yy, xx) = x.at(c, n, yy / 2, xx / 2);
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.channels(), dy.count(), dy.height() / 2, dy.width() / 2);
    for (std::size_t c = 0; c < dy.channels(); ++c)
        for (std::size_t n = 0; n < dy.count(); ++n)
            for (std::size_t yy = 0; yy < dy.height(); ++yy)
                for (std::size_t xx = 0; xx < dy.width(); ++xx) dx.at(c, n, yy / 2, xx / 2) += dy.at(c, n, yy, xx);
    return dx;
}

/// 3x3 conv -> batch norm -> ReLU.
template <typename T>
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::mt19937_64& rng)
        : conv_(name + ".conv", in_channels, out_channels, 3, rng), bn_(name + ".bn", out_channels) {}

    Tensor<T> infer(const Tensor<T>& x) const { return relu(bn_.infer(conv_.infer(x))); }
    Tensor<T> forward(const Tensor<T>& x) {
        out_ = relu(bn_.forward(conv_.forward(x)));
        return out_;
    }
    Tensor<T> backward(const Tensor<T>& dy) { return conv_.backward(bn_.backward(relu_backward(out_, dy))); }

    /// Appends the ReLU on/off pattern of the last forward().
    void append_regime(std::vector<std::int32_t>& out) const {
        for (T v : out_.values()) out.push_back(v > T(0));
    }

    std::size_t in_channels() const noexcept { return conv_.in_channels(); }
    std::size_t out_channels() const noexcept { return conv_.out_channels(); }

    void visit(const ParamVisitor<T>& f) {
        conv_.visit(f);
        bn_.visit(f);
    }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
    Tensor<T> out_;
};

/// A chain of ConvBlocks.
template <typename T>
class ConvStack {
public:
    ConvStack() = default;
    ConvStack(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t blocks,
              std::mt19937_64& rng) {
        for (std::size_t i = 0; i < blocks; ++i)
            blocks_.emplace_back(name + "." + std::to_string(i), i == 0 ? in_channels : out_channels,
                                 out_channels, rng);
    }

    Tensor<T> infer(Tensor<T> x) const {
        for (const auto& b : blocks_) x = b.infer(x);
        return x;
    }
    Tensor<T> forward(Tensor<T> x) {
        for (auto& b : blocks_) x = b.forward(x);
        return x;
    }
    Tensor<T> backward(Tensor<T> dy) {
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dy = it->backward(dy);
        return dy;
    }
    void visit(const ParamVisitor<T>& f) {
        for (auto& b : blocks_) b.visit(f);
    }
    void append_regime(std::vector<std::int32_t>& out) const {
        for (const auto& b : blocks_) b.append_regime(out);
    }
    std::size_t in_channels() const { return blocks_.front().in_channels(); }

private:
    std::vector<ConvBlock<T>> blocks_;
};

/// Fully connected layer on row vectors: y = x W^T + b, x is [N x in].
template <typename T>
class Linear {
public:
    using RowMatrix = typename Tensor<T>::RowMatrix;

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
        : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {
        fill_normal(weight_.value, std::sqrt(2.0 / double(in)), rng);
    }

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }

    RowMatrix infer(const RowMatrix& x) const {
        if (std::size_t(x.cols()) != in_) throw ConfigError("Linear " + weight_.name + ": input width mismatch");
        RowMatrix y = x * weight().transpose();
        y.rowwise() += bias().transpose();
        return y;
    }
    RowMatrix forward(const RowMatrix& x) {
        input_ = x;
        return infer(x);
    }
    RowMatrix backward(const RowMatrix& dy) {
        Eigen::Map<RowMatrix> dw(weight_.grad.data(), Eigen::Index(out_), Eigen::Index(in_));
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), Eigen::Index(out_));
        dw.noalias() += dy.transpose() * input_;
        db += dy.colwise().sum().transpose();
        return dy * weight();
    }

    void visit(const ParamVisitor<T>& f) {
        f(weight_);
        f(bias_);
    }

private:
    Eigen::Map<const RowMatrix> weight() const {
        return Eigen::Map<const RowMatrix>(weight_.value.data(), Eigen::Index(out_), Eigen::Index(in_));
    }
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias() const {
        return Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.value.data(), Eigen::Index(out_));
    }

    std::size_t in_ = 0, out_ = 0;
    Parameter<T> weight_, bias_;
    RowMatrix input_;
};

}  // namespace ceseg::nn
