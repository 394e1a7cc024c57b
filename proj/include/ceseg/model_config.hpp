#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "ceseg/errors.hpp"

namespace ceseg {

/// Architecture hyperparameters shared by the backbone and the CE block.
struct ModelConfig {
    int depth = 3;            ///< encoder downsampling stages
    int base_channels = 16;   ///< width of the first stage and of the backbone features B
    int embed_channels = 8;   ///< embedding dimensionality C_e
    int in_channels = 1;
    int l = 1;                ///< neighbour slice interval
    int k = 3;                ///< local matching window radius in pixels
    int r = 64;               ///< attention merge expansion factor
    double fg_threshold = 0.5;

    void validate() const {
        auto require = [](bool ok, const char* what) {
            if (!ok) throw ConfigError(std::string("ModelConfig: ") + what);
        };
        require(depth >= 1, "depth must be >= 1");
        require(base_channels >= 1, "base_channels must be >= 1");
        require(embed_channels >= 1, "embed_channels must be >= 1");
        require(in_channels >= 1, "in_channels must be >= 1");
        require(l >= 1, "l must be >= 1");
        require(k >= 0, "k must be >= 0");
        require(r >= 1, "r must be >= 1");
        require(fg_threshold > 0.0 && fg_threshold < 1.0, "fg_threshold must lie in (0, 1)");
    }

    /// Spatial sizes must be multiples of this.
    std::size_t spatial_multiple() const { return std::size_t{1} << depth; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, depth, base_channels, embed_channels, in_channels, l,
                                                k, r, fg_threshold)

}  // namespace ceseg
