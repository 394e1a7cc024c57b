#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

/**
 * Procedural phantom parameters. Radii and drift are in voxels.
 *
 * Each case is an "organ" made of 1-3 elliptical lobes sharing one axial
 * extent. Lobe centres drift smoothly (sinusoidally) from slice to slice and
 * their in-plane radii follow an ellipsoidal profile blended by `taper`
 * (0: constant cross-section, 1: true ellipsoid). The image is the mask
 * times a per-slice contrast, plus a smooth linear background, single-slice
 * distractor blobs and Gaussian noise.
 */
struct PhantomSpec {
    int n_cases = 30;
    int depth = 32, height = 64, width = 64;
    double spacing_x = 1.0, spacing_y = 1.0, spacing_z = 1.5;
    int blob_count_min = 1, blob_count_max = 3;
    double radius_min = 7.0, radius_max = 14.0;
    double extent_min = 0.65, extent_max = 0.85;  ///< axial extent as a fraction of depth
    double drift_amplitude = 4.0;
    double taper = 0.6;
    double intensity_contrast = 1.0;
    double background_gradient = 0.3;  ///< intensity change across the full field of view
    double noise_sigma = 0.6;
    double weak_slice_fraction = 0.25;  ///< slices whose organ contrast is scaled down
    double weak_slice_contrast = 0.3;
    int distractors = 3;
    double distractor_radius = 5.0;
    std::uint64_t seed = 1234;

    void validate() const {
        auto require = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("PhantomSpec: " + what);
        };
        require(n_cases >= 1, "n_cases must be >= 1");
        require(depth >= 3 && height >= 8 && width >= 8, "shape too small");
        require(spacing_x > 0 && spacing_y > 0 && spacing_z > 0, "spacing must be positive");
        require(blob_count_min >= 1 && blob_count_max >= blob_count_min && blob_count_max <= 3,
                "blob count range must lie within [1, 3]");
        require(radius_min > 0 && radius_max >= radius_min, "invalid radius range");
        require(2 * (radius_max + drift_amplitude) < std::min(height, width),
                "radius plus drift exceeds the in-plane field of view");
        require(extent_min >= 0.6 && extent_max <= 1.0 && extent_max >= extent_min,
                "axial extent fractions must lie in [0.6, 1]");
        require(drift_amplitude >= 0, "drift amplitude must be >= 0");
        require(taper >= 0 && taper <= 1, "taper must lie in [0, 1]");
        require(intensity_contrast > 0, "intensity contrast must be positive");
        require(noise_sigma >= 0, "noise sigma must be >= 0");
        require(weak_slice_fraction >= 0 && weak_slice_fraction <= 1, "weak slice fraction must lie in [0, 1]");
        require(weak_slice_contrast > 0 && weak_slice_contrast <= 1, "weak slice contrast must lie in (0, 1]");
        require(distractors >= 0, "distractors must be >= 0");
    }

    Spacing spacing() const { return {spacing_x, spacing_y, spacing_z}; }
    Dims dims() const { return {std::size_t(depth), std::size_t(height), std::size_t(width)}; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PhantomSpec, n_cases, depth, height, width, spacing_x, spacing_y,
                                                spacing_z, blob_count_min, blob_count_max, radius_min, radius_max,
                                                extent_min, extent_max, drift_amplitude, taper, intensity_contrast,
                                                background_gradient, noise_sigma, weak_slice_fraction,
                                                weak_slice_contrast, distractors, distractor_radius, seed)

struct PhantomCase {
    Volume image;
    MaskVolume mask;
};

inline std::string phantom_case_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03d", index);
    return buf;
}

inline PhantomCase generate_phantom_case(const PhantomSpec& spec, int index) {
    std::seed_seq seq{std::uint32_t(spec.seed), std::uint32_t(spec.seed >> 32), std::uint32_t(index), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const Dims dims = spec.dims();
    const double D = spec.depth, H = spec.height, W = spec.width;
    PhantomCase out{Volume(dims, spec.spacing(), phantom_case_id(index)),
                    MaskVolume(dims, spec.spacing(), phantom_case_id(index))};

    struct Lobe {
        double cy, cx, ry, rx, angle, phase_y, phase_x, freq;
    };
    // Axial extent in whole slices, never below 60% of the stack.
    const double raw_extent = uniform(spec.extent_min, spec.extent_max) * D;
    const int n_min = int(std::ceil(0.6 * D - 1e-9));
    const int n_extent = std::clamp(int(std::lround(raw_extent)), n_min, spec.depth);
    const double raw_cz = D / 2.0 + uniform(-0.5, 0.5) * (D - raw_extent);
    const int z0 = std::clamp(int(std::lround(raw_cz - n_extent / 2.0)), 0, spec.depth - n_extent);
    const double half = n_extent / 2.0;
    const double cz = z0 + half;
    const double margin = spec.radius_max + spec.drift_amplitude + 1.0;
    const double base_y = uniform(margin, H - margin), base_x = uniform(margin, W - margin);
    std::uniform_int_distribution<int> lobe_count(spec.blob_count_min, spec.blob_count_max);
    std::vector<Lobe> lobes(std::size_t(lobe_count(rng)));
    for (std::size_t i = 0; i < lobes.size(); ++i) {
        Lobe& b = lobes[i];
        b.ry = uniform(spec.radius_min, spec.radius_max);
        b.rx = uniform(spec.radius_min, spec.radius_max);
        // Extra lobes hang off the first one so the organ stays connected.
        const double off = i == 0 ? 0.0 : uniform(0.3, 0.7) * std::min(lobes[0].ry, lobes[0].rx);
        const double dir = uniform(0, 2 * std::numbers::pi);
        b.cy = std::clamp(base_y + off * std::sin(dir), margin, H - margin);
        b.cx = std::clamp(base_x + off * std::cos(dir), margin, W - margin);
        b.angle = uniform(0, std::numbers::pi);
        b.phase_y = uniform(0, 2 * std::numbers::pi);
        b.phase_x = uniform(0, 2 * std::numbers::pi);
        b.freq = uniform(0.5, 1.0);
    }

    for (std::size_t z = 0; z < dims.depth; ++z) {
        const double u = (double(z) + 0.5 - cz) / half;
        if (std::abs(u) > 1.0) continue;
        const double scale = (1.0 - spec.taper) + spec.taper * std::sqrt(std::max(0.0, 1.0 - u * u));
        for (const Lobe& b : lobes) {
            const double t = 2 * std::numbers::pi * b.freq * double(z) / D;
            const double cy = b.cy + spec.drift_amplitude * std::sin(t + b.phase_y);
            const double cx = b.cx + spec.drift_amplitude * std::sin(t + b.phase_x);
            const double ry = b.ry * scale, rx = b.rx * scale;
            const double ca = std::cos(b.angle), sa = std::sin(b.angle);
            for (std::size_t y = 0; y < dims.height; ++y)
                for (std::size_t x = 0; x < dims.width; ++x) {
                    const double dy = double(y) - cy, dx = double(x) - cx;
                    const double a = (ca * dx + sa * dy) / rx, c = (-sa * dx + ca * dy) / ry;
                    if (a * a + c * c <= 1.0) out.mask.at(z, y, x) = 1;
                }
        }
    }

    // Per-slice organ contrast: a fraction of slices is washed out.
    std::vector<double> contrast(dims.depth, spec.intensity_contrast);
    for (auto& c : contrast)
        if (unit(rng) < spec.weak_slice_fraction) c *= spec.weak_slice_contrast;

    const double gy = uniform(-1, 1), gx = uniform(-1, 1);
    const double gnorm = std::max(1e-9, std::abs(gy) + std::abs(gx));
    for (std::size_t z = 0; z < dims.depth; ++z)
        for (std::size_t y = 0; y < dims.height; ++y)
            for (std::size_t x = 0; x < dims.width; ++x) {
                const double ramp =
                    spec.background_gradient * (gy * (double(y) / H - 0.5) + gx * (double(x) / W - 0.5)) / gnorm;
                out.image.at(z, y, x) = float(ramp + (out.mask.at(z, y, x) ? contrast[z] : 0.0));
            }

    // Distractors: organ-bright discs confined to a single slice and kept
    // clear of the organ outline.
    for (int i = 0; i < spec.distractors; ++i) {
        const auto z = std::size_t(uniform(0, D - 1e-9));
        const double r = spec.distractor_radius * uniform(0.6, 1.0);
        const double cy = uniform(r, H - r), cx = uniform(r, W - r);
        std::vector<std::size_t> pixels;
        bool clear = true;
        for (std::size_t y = 0; y < dims.height && clear; ++y)
            for (std::size_t x = 0; x < dims.width; ++x) {
                const double dy = double(y) - cy, dx = double(x) - cx;
                const double rr = dy * dy + dx * dx;
                if (rr <= (r + 2) * (r + 2) && out.mask.at(z, y, x)) {
                    clear = false;
                    break;
                }
                if (rr <= r * r) pixels.push_back(out.image.index(z, y, x));
            }
        if (!clear) continue;
        for (std::size_t p : pixels) out.image.voxels[p] += float(contrast[z]);
    }

    if (spec.noise_sigma > 0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (auto& v : out.image.voxels) v += float(noise(rng));
    }
    return out;
}

/// Deterministic given `spec.seed`.
inline std::vector<PhantomCase> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    std::vector<PhantomCase> cases;
    cases.reserve(std::size_t(spec.n_cases));
    for (int i = 0; i < spec.n_cases; ++i) cases.push_back(generate_phantom_case(spec, i));
    return cases;
}

}  // namespace ceseg
