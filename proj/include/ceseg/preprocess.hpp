#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "ceseg/errors.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

/// Zero mean, unit (population) variance over the whole volume.
inline Volume zscore(Volume v) {
    double mean = 0;
    for (float f : v.voxels) mean += f;
    mean /= double(v.voxels.size());
    double var = 0;
    for (float f : v.voxels) var += (f - mean) * (f - mean);
    var /= double(v.voxels.size());
    if (!(var > 1e-12)) throw NormalizationError("volume " + v.case_id + " has zero variance");
    const double inv = 1.0 / std::sqrt(var);
    for (auto& f : v.voxels) f = float((f - mean) * inv);
    return v;
}

/// CT: clip to [lo, hi] HU, then z-score.
inline Volume preprocess_ct(Volume v, double lo = -100.0, double hi = 200.0) {
    if (!(hi > lo)) throw ConfigError("preprocess_ct: hi must exceed lo");
    for (auto& f : v.voxels) f = float(std::clamp(double(f), lo, hi));
    return zscore(std::move(v));
}

/// MR: z-score only (bias-field correction is not performed).
inline Volume preprocess_mr(Volume v) { return zscore(std::move(v)); }

struct AugmentConfig {
    double p_brightness = 0.5;
    double p_contrast = 0.5;
    double p_elastic = 0.5;
    double brightness_range = 0.1;  ///< shift is U(-range, range) * (max - min)
    double contrast_range = 0.1;    ///< scale is U(1 - range, 1 + range) about the mean
    int elastic_grid = 4;           ///< control points per side, per slice
    double elastic_sigma = 1.0;     ///< Gaussian smoothing of control displacements, in grid units
    double elastic_delta = 3.0;     ///< maximum displacement in voxels
};

namespace detail {

inline double bilinear(const float* plane, std::size_t H, std::size_t W, double y, double x) {
    y = std::clamp(y, 0.0, double(H - 1));
    x = std::clamp(x, 0.0, double(W - 1));
    const auto y0 = std::size_t(std::floor(y)), x0 = std::size_t(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = y - double(y0), fx = x - double(x0);
    const double top = plane[y0 * W + x0] * (1 - fx) + plane[y0 * W + x1] * fx;
    const double bottom = plane[y1 * W + x0] * (1 - fx) + plane[y1 * W + x1] * fx;
    return top * (1 - fy) + bottom * fy;
}

/// Smooth per-pixel displacement field (dy, dx) for one slice.
inline std::pair<std::vector<double>, std::vector<double>> elastic_field(std::size_t H, std::size_t W,
                                                                          const AugmentConfig& cfg,
                                                                          std::mt19937_64& rng) {
    const auto G = std::size_t(std::max(2, cfg.elastic_grid));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> gy(G * G), gx(G * G);
    for (auto& v : gy) v = normal(rng);
    for (auto& v : gx) v = normal(rng);

    auto smooth = [&](std::vector<double>& g) {
        if (cfg.elastic_sigma <= 0) return;
        std::vector<double> out(G * G, 0.0);
        for (std::size_t i = 0; i < G; ++i)
            for (std::size_t j = 0; j < G; ++j) {
                double acc = 0, wsum = 0;
                for (std::size_t a = 0; a < G; ++a)
                    for (std::size_t b = 0; b < G; ++b) {
                        const double di = double(a) - double(i), dj = double(b) - double(j);
                        const double w = std::exp(-(di * di + dj * dj) / (2 * cfg.elastic_sigma * cfg.elastic_sigma));
                        acc += w * g[a * G + b];
                        wsum += w;
                    }
                out[i * G + j] = acc / wsum;
            }
        g = std::move(out);
    };
    smooth(gy);
    smooth(gx);
    double peak = 0;
    for (std::size_t i = 0; i < G * G; ++i) peak = std::max(peak, std::hypot(gy[i], gx[i]));
    const double scale = peak > 0 ? cfg.elastic_delta / peak : 0.0;

    std::vector<double> dy(H * W), dx(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double u = H > 1 ? double(y) * double(G - 1) / double(H - 1) : 0.0;
            const double v = W > 1 ? double(x) * double(G - 1) / double(W - 1) : 0.0;
            const auto i0 = std::min(std::size_t(u), G - 2), j0 = std::min(std::size_t(v), G - 2);
            const double fu = u - double(i0), fv = v - double(j0);
            auto interp = [&](const std::vector<double>& g) {
                return (g[i0 * G + j0] * (1 - fv) + g[i0 * G + j0 + 1] * fv) * (1 - fu) +
                       (g[(i0 + 1) * G + j0] * (1 - fv) + g[(i0 + 1) * G + j0 + 1] * fv) * fu;
            };
            dy[y * W + x] = scale * interp(gy);
            dx[y * W + x] = scale * interp(gx);
        }
    return {std::move(dy), std::move(dx)};
}

}  // namespace detail

/**
 * Training-time augmentation: brightness shift, contrast stretch about the
 * mean, and a per-slice elastic warp shared by image (bilinear) and mask
 * (nearest neighbour). Each is applied independently with its probability.
 */
inline std::pair<Volume, MaskVolume> augment(const Volume& image, const MaskVolume& mask, std::uint64_t seed,
                                             const AugmentConfig& cfg = {}) {
    validate_pair(image, mask);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Volume img = image;
    MaskVolume msk = mask;

    if (unit(rng) < cfg.p_brightness) {
        const auto [lo, hi] = std::minmax_element(img.voxels.begin(), img.voxels.end());
        const double shift = (2 * unit(rng) - 1) * cfg.brightness_range * double(*hi - *lo);
        for (auto& v : img.voxels) v = float(v + shift);
    }
    if (unit(rng) < cfg.p_contrast) {
        double mean = 0;
        for (float v : img.voxels) mean += v;
        mean /= double(img.voxels.size());
        const double c = 1.0 + (2 * unit(rng) - 1) * cfg.contrast_range;
        for (auto& v : img.voxels) v = float(mean + c * (v - mean));
    }
    if (unit(rng) < cfg.p_elastic && cfg.elastic_delta > 0) {
        const std::size_t H = img.dims.height, W = img.dims.width, P = img.dims.plane();
        for (std::size_t z = 0; z < img.dims.depth; ++z) {
            const auto [dy, dx] = detail::elastic_field(H, W, cfg, rng);
            const std::uint8_t* msrc = mask.voxels.data() + z * P;
            std::vector<float> plane(img.voxels.begin() + std::ptrdiff_t(z * P),
                                     img.voxels.begin() + std::ptrdiff_t((z + 1) * P));
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x) {
                    const std::size_t i = y * W + x;
                    const double sy = double(y) + dy[i], sx = double(x) + dx[i];
                    img.voxels[z * P + i] = float(detail::bilinear(plane.data(), H, W, sy, sx));
                    const auto ny = std::size_t(std::clamp(std::lround(sy), 0L, long(H - 1)));
                    const auto nx = std::size_t(std::clamp(std::lround(sx), 0L, long(W - 1)));
                    msk.voxels[z * P + i] = msrc[ny * W + nx];
                }
        }
    }
    return {std::move(img), std::move(msk)};
}

}  // namespace ceseg
