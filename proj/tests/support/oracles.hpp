#pragma once

// Slow, obviously-correct reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "ceseg/ce_block.hpp"
#include "ceseg/metrics.hpp"
#include "ceseg/tensor.hpp"
#include "ceseg/volume.hpp"

namespace ceseg::testing {

/**
 * Pixel-by-pixel scan: for p, visit candidate q in row-major order and keep
 * the first strict minimum of d(e_p, e_q) over organ pixels q. With a radius
 * k only the (2k+1)^2 window around p is visited; without one (global mode)
 * every pixel of the neighbour slice is.
 */
template <typename T>
MatchResult<T> brute_force_matching(const Tensor<T>& cur, const Tensor<T>& nb, const Tensor<T>& prob,
                                    std::optional<int> k, double thr) {
    const std::size_t N = cur.count(), H = cur.height(), W = cur.width(), C = cur.channels();
    MatchResult<T> out{Tensor<T>(1, N, H, W, T(1)), std::vector<std::int32_t>(N * H * W, -1)};
    std::vector<T> ep(C), eq(C);
    const std::ptrdiff_t R = k ? *k : std::ptrdiff_t(std::max(H, W));
    for (std::size_t n = 0; n < N; ++n)
        for (std::ptrdiff_t y = 0; y < std::ptrdiff_t(H); ++y)
            for (std::ptrdiff_t x = 0; x < std::ptrdiff_t(W); ++x) {
                T best = std::numeric_limits<T>::infinity();
                std::int32_t arg = -1;
                for (std::ptrdiff_t qy = y - R; qy <= y + R; ++qy)
                    for (std::ptrdiff_t qx = x - R; qx <= x + R; ++qx) {
                        if (qy < 0 || qx < 0 || qy >= std::ptrdiff_t(H) || qx >= std::ptrdiff_t(W)) continue;
                        if (!(prob.at(0, n, std::size_t(qy), std::size_t(qx)) >= T(thr))) continue;
                        for (std::size_t c = 0; c < C; ++c) {
                            ep[c] = cur.at(c, n, std::size_t(y), std::size_t(x));
                            eq[c] = nb.at(c, n, std::size_t(qy), std::size_t(qx));
                        }
                        const T d = pairwise_embedding_distance<T>(ep, eq);
                        if (d < best) {
                            best = d;
                            arg = std::int32_t(qy * std::ptrdiff_t(W) + qx);
                        }
                    }
                const std::size_t p = (n * H + std::size_t(y)) * W + std::size_t(x);
                out.argmin[p] = arg;
                if (arg >= 0) out.distance[p] = best;
            }
    return out;
}

/// Directed surface distances by exhaustive search over surface pairs, in
/// the same pooled order as the library (pred->gt, then gt->pred).
inline std::vector<double> brute_force_surface_distances(const MaskVolume& a, const MaskVolume& b, Spacing sp) {
    const auto sa = extract_surface(a);
    const auto sb = extract_surface(b);
    auto nearest = [&](const Voxel& p, const std::vector<Voxel>& set) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : set) {
            const double dz = double(p[0]) - double(q[0]);
            const double dy = double(p[1]) - double(q[1]);
            const double dx = double(p[2]) - double(q[2]);
            // Same association as the distance transform: w^2 * d^2 per axis.
            const double s = (sp.x * sp.x) * dx * dx + (sp.y * sp.y) * dy * dy + (sp.z * sp.z) * dz * dz;
            best = std::min(best, s);
        }
        return std::sqrt(best);
    };
    std::vector<double> out;
    for (const auto& p : sa) out.push_back(nearest(p, sb));
    for (const auto& p : sb) out.push_back(nearest(p, sa));
    return out;
}

/// Random binary mask; `density` per voxel, optionally forced non-empty.
inline MaskVolume random_mask(Dims d, Spacing sp, double density, std::mt19937_64& rng) {
    MaskVolume m(d, sp, "random");
    std::bernoulli_distribution on(density);
    for (auto& v : m.voxels) v = on(rng) ? 1 : 0;
    std::uniform_int_distribution<std::size_t> pick(0, m.voxels.size() - 1);
    m.voxels[pick(rng)] = 1;
    return m;
}

/// Random blob mask (union of balls), closer to real segmentations.
inline MaskVolume random_blob_mask(Dims d, Spacing sp, std::mt19937_64& rng) {
    MaskVolume m(d, sp, "blob");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int balls = 1 + int(u(rng) * 3);
    for (int b = 0; b < balls; ++b) {
        const double cz = u(rng) * double(d.depth), cy = u(rng) * double(d.height), cx = u(rng) * double(d.width);
        const double r = 1.0 + u(rng) * double(std::min({d.depth, d.height, d.width})) / 2.5;
        for (std::size_t z = 0; z < d.depth; ++z)
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x) {
                    const double dz = double(z) - cz, dy = double(y) - cy, dx = double(x) - cx;
                    if (dz * dz + dy * dy + dx * dx <= r * r) m.at(z, y, x) = 1;
                }
    }
    std::uniform_int_distribution<std::size_t> pick(0, m.voxels.size() - 1);
    m.voxels[pick(rng)] = 1;
    return m;
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(s);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.values()) v = T(u(rng));
    return t;
}

}  // namespace ceseg::testing
