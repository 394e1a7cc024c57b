#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ceseg/errors.hpp"

namespace ceseg {

/// Dimensions of a slice stack: `channels` feature planes over `count` slices
/// of `height` x `width` pixels.
struct Shape {
    std::size_t channels = 0;
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t plane() const noexcept { return height * width; }
    /// Elements of one channel across every slice.
    std::size_t channel_size() const noexcept { return count * height * width; }
    std::size_t size() const noexcept { return channels * channel_size(); }

    friend bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        return "[C=" + std::to_string(channels) + ", N=" + std::to_string(count) +
               ", H=" + std::to_string(height) + ", W=" + std::to_string(width) + "]";
    }
};

/**
 * Dense 4D array holding a stack of per-slice feature maps.
 *
 * Storage is channel-major (C, N, H, W): every channel of every slice of the
 * stack is one contiguous row of length N*H*W. Convolutions then reduce to a
 * single GEMM over the whole stack and batch-norm statistics are row
 * reductions. Element (c, n, y, x) of the conceptual [N, C, H, W] batch is
 * `at(c, n, y, x)`.
 */
template <typename T>
class Tensor {
public:
    using Scalar = T;
    using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatrixMap = Eigen::Map<RowMatrix>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(std::size_t c, std::size_t n, std::size_t h, std::size_t w, T fill = T(0))
        : Tensor(Shape{c, n, h, w}, fill) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t channels() const noexcept { return shape_.channels; }
    std::size_t count() const noexcept { return shape_.count; }
    std::size_t height() const noexcept { return shape_.height; }
    std::size_t width() const noexcept { return shape_.width; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::size_t index(std::size_t c, std::size_t n, std::size_t y, std::size_t x) const noexcept {
        return ((c * shape_.count + n) * shape_.height + y) * shape_.width + x;
    }
    T& at(std::size_t c, std::size_t n, std::size_t y, std::size_t x) noexcept {
        return data_[index(c, n, y, x)];
    }
    const T& at(std::size_t c, std::size_t n, std::size_t y, std::size_t x) const noexcept {
        return data_[index(c, n, y, x)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Channel c as a contiguous row spanning all slices.
    std::span<T> channel(std::size_t c) noexcept {
        return {data_.data() + c * shape_.channel_size(), shape_.channel_size()};
    }
    std::span<const T> channel(std::size_t c) const noexcept {
        return {data_.data() + c * shape_.channel_size(), shape_.channel_size()};
    }
    /// One H*W plane.
    std::span<T> plane(std::size_t c, std::size_t n) noexcept {
        return {data_.data() + index(c, n, 0, 0), shape_.plane()};
    }
    std::span<const T> plane(std::size_t c, std::size_t n) const noexcept {
        return {data_.data() + index(c, n, 0, 0), shape_.plane()};
    }

    /// View as a (C x N*H*W) row-major matrix.
    MatrixMap matrix() noexcept {
        return MatrixMap(data_.data(), Eigen::Index(shape_.channels), Eigen::Index(shape_.channel_size()));
    }
    ConstMatrixMap matrix() const noexcept {
        return ConstMatrixMap(data_.data(), Eigen::Index(shape_.channels),
                              Eigen::Index(shape_.channel_size()));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Stacks the channels of `parts` (which must agree on N, H, W).
template <typename T>
Tensor<T> concat_channels(std::initializer_list<const Tensor<T>*> parts) {
    const Shape& first = (*parts.begin())->shape();
    std::size_t channels = 0;
    for (const auto* p : parts) {
        const Shape& s = p->shape();
        if (s.count != first.count || s.height != first.height || s.width != first.width) {
            throw InputError("concat_channels: " + s.str() + " does not align with " + first.str());
        }
        channels += s.channels;
    }
    Tensor<T> out(channels, first.count, first.height, first.width);
    T* dst = out.data();
    for (const auto* p : parts) dst = std::copy(p->data(), p->data() + p->size(), dst);
    return out;
}

/// Copies channels [begin, begin + n) of `t`.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t begin, std::size_t n) {
    if (begin + n > t.channels()) throw InputError("slice_channels: channel range out of bounds");
    Tensor<T> out(n, t.count(), t.height(), t.width());
    const std::size_t cs = t.shape().channel_size();
    std::copy(t.data() + begin * cs, t.data() + (begin + n) * cs, out.data());
    return out;
}

/// out[:, i] = t[:, indices[i]] for every channel.
template <typename T>
Tensor<T> gather_slices(const Tensor<T>& t, std::span<const std::size_t> indices) {
    Tensor<T> out(t.channels(), indices.size(), t.height(), t.width());
    for (std::size_t c = 0; c < t.channels(); ++c) {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            auto src = t.plane(c, indices[i]);
            std::copy(src.begin(), src.end(), out.plane(c, i).begin());
        }
    }
    return out;
}

/// Adjoint of gather_slices: grad[:, indices[i]] += g[:, i].
template <typename T>
void scatter_add_slices(Tensor<T>& grad, const Tensor<T>& g, std::span<const std::size_t> indices) {
    for (std::size_t c = 0; c < g.channels(); ++c) {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            auto src = g.plane(c, i);
            auto dst = grad.plane(c, indices[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    if (!(dst.shape() == src.shape())) throw InputError("add_into: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace ceseg
