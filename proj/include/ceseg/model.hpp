#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ceseg/backbone.hpp"
#include "ceseg/ce_block.hpp"
#include "ceseg/errors.hpp"

namespace ceseg {

enum class Variant { baseline, ce };

inline std::string to_string(Variant v) { return v == Variant::ce ? "ce" : "baseline"; }

inline Variant parse_variant(const std::string& s) {
    if (s == "ce") return Variant::ce;
    if (s == "baseline") return Variant::baseline;
    throw ConfigError("unknown variant '" + s + "' (expected baseline or ce)");
}

/// Named parameter groups, in the order they are updated and serialized.
enum class ParamGroup { backbone, ce_embed, ce_match, ce_amm, ce_final };

inline const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::ce_embed: return "ce_embed";
        case ParamGroup::ce_match: return "ce_match";
        case ParamGroup::ce_amm: return "ce_amm";
        case ParamGroup::ce_final: return "ce_final";
    }
    return "?";
}

template <typename T>
struct ModelOutput {
    Tensor<T> original;  ///< decoder prediction P
    Tensor<T> final;     ///< P_CE, or P for the baseline
    std::optional<CEOutput<T>> ce;
};

/// Backbone plus (for the ce variant) the contextual embedding block.
template <typename T>
class SegmentationModel {
public:
    SegmentationModel() = default;
    SegmentationModel(const ModelConfig& config, Variant variant, std::uint64_t seed)
        : config_(config), variant_(variant), backbone_(config, seed) {
        if (variant == Variant::ce) ce_.emplace(config, seed ^ 0x9e3779b97f4a7c15ULL);
    }

    const ModelConfig& config() const noexcept { return config_; }
    Variant variant() const noexcept { return variant_; }
    const Backbone<T>& backbone() const noexcept { return backbone_; }
    Backbone<T>& backbone() noexcept { return backbone_; }
    bool has_ce() const noexcept { return ce_.has_value(); }
    const CEBlock<T>& ce() const { return ce_.value(); }
    CEBlock<T>& ce() { return ce_.value(); }

    ModelOutput<T> infer(const Tensor<T>& slices) const {
        BackboneOutput<T> b = backbone_.infer(slices);
        ModelOutput<T> out;
        if (ce_) {
            out.ce = ce_->infer(b.features, b.prediction);
            out.final = out.ce->final_prediction;
        } else {
            out.final = b.prediction;
        }
        out.original = std::move(b.prediction);
        return out;
    }

    ModelOutput<T> forward(const Tensor<T>& slices) {
        BackboneOutput<T> b = backbone_.forward(slices);
        ModelOutput<T> out;
        if (ce_) {
            out.ce = ce_->forward(b.features, b.prediction);
            out.final = out.ce->final_prediction;
        } else {
            out.final = b.prediction;
        }
        out.original = std::move(b.prediction);
        return out;
    }

    /// Backpropagates dL/dP_final and dL/dP (either may be empty).
    void backward(const Tensor<T>& d_final, const Tensor<T>& d_original) {
        Tensor<T> d_pred = d_original;
        Tensor<T> d_features;
        if (ce_) {
            if (!d_final.empty()) {
                auto [df, dp] = ce_->backward(d_final);
                d_features = std::move(df);
                if (d_pred.empty()) d_pred = std::move(dp);
                else add_into(d_pred, dp);
            }
        } else if (!d_final.empty()) {
            if (d_pred.empty()) d_pred = d_final;
            else add_into(d_pred, d_final);
        }
        if (d_pred.empty()) return;
        backbone_.backward(d_features, d_pred);
    }

    void visit_group(ParamGroup g, const nn::ParamVisitor<T>& f) {
        switch (g) {
            case ParamGroup::backbone: backbone_.visit(f); break;
            case ParamGroup::ce_embed: if (ce_) ce_->visit_embed(f); break;
            case ParamGroup::ce_match: if (ce_) ce_->visit_match(f); break;
            case ParamGroup::ce_amm: if (ce_) ce_->visit_amm(f); break;
            case ParamGroup::ce_final: if (ce_) ce_->visit_final(f); break;
        }
    }

    void visit(const nn::ParamVisitor<T>& f) {
        for (ParamGroup g : kGroups) visit_group(g, f);
    }

    std::vector<std::int32_t> regime() const {
        std::vector<std::int32_t> out;
        backbone_.append_regime(out);
        if (ce_) ce_->append_regime(out);
        return out;
    }

    void zero_grad() {
        visit([](nn::Parameter<T>& p) { p.zero_grad(); });
    }

    static constexpr ParamGroup kGroups[] = {ParamGroup::backbone, ParamGroup::ce_embed, ParamGroup::ce_match,
                                             ParamGroup::ce_amm, ParamGroup::ce_final};

private:
    ModelConfig config_{};
    Variant variant_ = Variant::ce;
    Backbone<T> backbone_;
    std::optional<CEBlock<T>> ce_;
};

/// Final predictions of every slice of a contiguous stack in one pass.
template <typename T>
ModelOutput<T> ce_forward(const SegmentationModel<T>& model, const Tensor<T>& slices) {
    if (!model.has_ce()) throw ConfigError("ce_forward: model has no CE block");
    return model.infer(slices);
}

}  // namespace ceseg
