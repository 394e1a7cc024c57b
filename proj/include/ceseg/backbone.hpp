#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ceseg/model_config.hpp"
#include "ceseg/nn/layers.hpp"
#include "ceseg/tensor.hpp"

namespace ceseg {

/// Backbone features B (last decoder map, full resolution) and the decoder's
/// own sigmoid prediction P.
template <typename T>
struct BackboneOutput {
    Tensor<T> features;
    Tensor<T> prediction;
};

/**
 * Small U-Net: `depth` encoder stages of two ConvBlocks followed by 2x max
 * pooling, a two-block bottleneck, and a mirrored decoder that upsamples
 * (nearest), concatenates the matching skip connection and applies two
 * ConvBlocks. A 1x1 conv + sigmoid head maps B to P.
 */
template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const ModelConfig& config, std::uint64_t seed) : config_(config) {
        config.validate();
        std::mt19937_64 rng(seed);
        const auto width = [&](int stage) { return std::size_t(config.base_channels) << stage; };
        std::size_t in = std::size_t(config.in_channels);
        for (int i = 0; i < config.depth; ++i) {
            encoders_.emplace_back("backbone.enc" + std::to_string(i), in, width(i), 2, rng);
            pools_.emplace_back();
            in = width(i);
        }
        bottleneck_ = nn::ConvStack<T>("backbone.bottleneck", in, width(config.depth), 2, rng);
        decoders_.resize(std::size_t(config.depth));
        for (int i = config.depth - 1; i >= 0; --i) {
            decoders_[std::size_t(i)] =
                nn::ConvStack<T>("backbone.dec" + std::to_string(i), width(i + 1) + width(i), width(i), 2, rng);
        }
        head_ = nn::Conv2d<T>("backbone.head", width(0), 1, 1, rng);
    }

    const ModelConfig& config() const noexcept { return config_; }
    std::size_t feature_channels() const noexcept { return std::size_t(config_.base_channels); }

    BackboneOutput<T> infer(const Tensor<T>& x) const {
        check_input(x);
        std::vector<Tensor<T>> skips;
        Tensor<T> h = x;
        for (std::size_t i = 0; i < encoders_.size(); ++i) {
            skips.push_back(encoders_[i].infer(h));
            h = pools_[i].infer(skips.back());
        }
        h = bottleneck_.infer(h);
        for (std::size_t i = decoders_.size(); i-- > 0;) {
            const Tensor<T> up = nn::upsample2(h);
            h = decoders_[i].infer(concat_channels<T>({&up, &skips[i]}));
        }
        Tensor<T> p = nn::sigmoid(head_.infer(h));
        return {std::move(h), std::move(p)};
    }

    /// Training-mode forward pass; caches activations for backward().
    BackboneOutput<T> forward(const Tensor<T>& x) {
        check_input(x);
        Tensor<T> h = x;
        skips_.resize(encoders_.size());
        for (std::size_t i = 0; i < encoders_.size(); ++i) {
            skips_[i] = encoders_[i].forward(h);
            h = pools_[i].forward(skips_[i]);
        }
        h = bottleneck_.forward(h);
        for (std::size_t i = decoders_.size(); i-- > 0;) {
            const Tensor<T> up = nn::upsample2(h);
            h = decoders_[i].forward(concat_channels<T>({&up, &skips_[i]}));
        }
        prediction_ = nn::sigmoid(head_.forward(h));
        return {h, prediction_};
    }

    /// Accumulates parameter gradients given dL/dB and dL/dP.
    void backward(const Tensor<T>& d_features, const Tensor<T>& d_prediction) {
        Tensor<T> d = head_.backward(nn::sigmoid_backward(prediction_, d_prediction));
        if (!d_features.empty()) add_into(d, d_features);
        std::vector<Tensor<T>> d_skips(decoders_.size());
        for (std::size_t i = 0; i < decoders_.size(); ++i) {
            Tensor<T> dcat = decoders_[i].backward(d);
            const std::size_t up_channels = dcat.channels() - encoder_width(i);
            d_skips[i] = slice_channels(dcat, up_channels, encoder_width(i));
            d = nn::upsample2_backward(slice_channels(dcat, 0, up_channels));
        }
        d = bottleneck_.backward(d);
        for (std::size_t i = encoders_.size(); i-- > 0;) {
            d = pools_[i].backward(d);
            add_into(d, d_skips[i]);
            d = encoders_[i].backward(d);
        }
    }

    void visit(const nn::ParamVisitor<T>& f) {
        for (auto& e : encoders_) e.visit(f);
        bottleneck_.visit(f);
        for (std::size_t i = decoders_.size(); i-- > 0;) decoders_[i].visit(f);
        head_.visit(f);
    }

    /// Piecewise-linear regime (ReLU masks, pooling choices) of the last forward().
    void append_regime(std::vector<std::int32_t>& out) const {
        for (std::size_t i = 0; i < encoders_.size(); ++i) {
            encoders_[i].append_regime(out);
            pools_[i].append_regime(out);
        }
        bottleneck_.append_regime(out);
        for (const auto& d : decoders_) d.append_regime(out);
    }

private:
    std::size_t encoder_width(std::size_t stage) const { return std::size_t(config_.base_channels) << stage; }

    void check_input(const Tensor<T>& x) const {
        const std::size_t m = config_.spatial_multiple();
        if (x.channels() != std::size_t(config_.in_channels))
            throw InputError("backbone: expected " + std::to_string(config_.in_channels) + " input channel(s), got " +
                             x.shape().str());
        if (x.height() == 0 || x.width() == 0 || x.height() % m || x.width() % m)
            throw InputError("backbone: spatial size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                             " not divisible by " + std::to_string(m));
        if (x.count() == 0) throw InputError("backbone: empty slice stack");
    }

    ModelConfig config_{};
    std::vector<nn::ConvStack<T>> encoders_;
    std::vector<nn::MaxPool2<T>> pools_;
    nn::ConvStack<T> bottleneck_;
    std::vector<nn::ConvStack<T>> decoders_;
    nn::Conv2d<T> head_;
    std::vector<Tensor<T>> skips_;
    Tensor<T> prediction_;
};

}  // namespace ceseg
