#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ceseg/errors.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

// --- training loss ----------------------------------------------------------

/// Soft Dice loss for one foreground class:
/// 1 - (2 sum(y p) + smooth) / (sum(y) + sum(p) + smooth).
template <typename T>
T dice_loss(std::span<const T> pred, std::span<const T> target, double smooth = 1e-5) {
    if (pred.size() != target.size()) throw InputError("dice_loss: prediction and target sizes differ");
    double inter = 0, sum_y = 0, sum_p = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += double(target[i]) * double(pred[i]);
        sum_y += target[i];
        sum_p += pred[i];
    }
    return T(1.0 - (2.0 * inter + smooth) / (sum_y + sum_p + smooth));
}

/// dL/dp of dice_loss, scaled by `weight`.
template <typename T>
std::vector<T> dice_loss_gradient(std::span<const T> pred, std::span<const T> target, double smooth = 1e-5,
                                  double weight = 1.0) {
    if (pred.size() != target.size()) throw InputError("dice_loss_gradient: prediction and target sizes differ");
    double inter = 0, sum_y = 0, sum_p = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += double(target[i]) * double(pred[i]);
        sum_y += target[i];
        sum_p += pred[i];
    }
    const double num = 2.0 * inter + smooth;
    const double den = sum_y + sum_p + smooth;
    std::vector<T> g(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        g[i] = T(-weight * (2.0 * double(target[i]) * den - num) / (den * den));
    return g;
}

// --- overlap metrics (percent) ----------------------------------------------

struct Confusion {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline void require_same_shape(const MaskVolume& a, const MaskVolume& b, const char* what) {
    if (a.dims != b.dims) throw InputError(std::string(what) + ": mask shapes differ");
}

inline Confusion confusion(const MaskVolume& pred, const MaskVolume& gt) {
    require_same_shape(pred, gt, "confusion");
    Confusion c;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        const bool p = pred.voxels[i] != 0, g = gt.voxels[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// 100 * 2|A n B| / (|A| + |B|); two empty masks score 100.
inline double dsc_3d(const MaskVolume& pred, const MaskVolume& gt) {
    const Confusion c = confusion(pred, gt);
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 100.0 : 100.0 * 2.0 * double(c.tp) / double(denom);
}

/// 100 * TP / (TP + FN); an empty ground truth scores 100.
inline double sensitivity(const MaskVolume& pred, const MaskVolume& gt) {
    const Confusion c = confusion(pred, gt);
    return c.tp + c.fn == 0 ? 100.0 : 100.0 * double(c.tp) / double(c.tp + c.fn);
}

/// 100 * TP / (TP + FP); an empty prediction scores 100.
inline double precision(const MaskVolume& pred, const MaskVolume& gt) {
    const Confusion c = confusion(pred, gt);
    return c.tp + c.fp == 0 ? 100.0 : 100.0 * double(c.tp) / double(c.tp + c.fp);
}

// --- surface distances ------------------------------------------------------

using Voxel = std::array<std::size_t, 3>;  // (z, y, x)

/// Foreground voxels with a background (or out-of-bounds) 6-neighbour, in
/// raster order.
inline std::vector<Voxel> extract_surface(const MaskVolume& m) {
    const Dims d = m.dims;
    std::vector<Voxel> out;
    bool any = false;
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x) {
                if (!m.at(z, y, x)) continue;
                any = true;
                const bool border = z == 0 || y == 0 || x == 0 || z + 1 == d.depth || y + 1 == d.height ||
                                    x + 1 == d.width;
                if (border || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) ||
                    !m.at(z, y + 1, x) || !m.at(z, y, x - 1) || !m.at(z, y, x + 1))
                    out.push_back({z, y, x});
            }
    if (!any) throw EmptyMaskError("extract_surface: mask " + m.case_id + " is empty");
    return out;
}

namespace detail {

/// One pass of the lower-envelope squared distance transform along a line
/// (Felzenszwalb-Huttenlocher): out[p] = min_q f[q] + w2 (p - q)^2 over
/// finite f[q].
inline void edt_line(const double* f, std::size_t n, double w2, double* out, std::vector<std::size_t>& v,
                     std::vector<double>& zb) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.resize(n);
    zb.resize(n + 1);
    std::ptrdiff_t k = -1;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            zb[0] = -inf;
            zb[1] = inf;
            continue;
        }
        double s = 0;
        while (true) {
            const std::size_t r = v[std::size_t(k)];
            s = ((f[q] + w2 * double(q) * double(q)) - (f[r] + w2 * double(r) * double(r))) /
                (2.0 * w2 * (double(q) - double(r)));
            // zb[0] is -inf, so this never pops the last parabola.
            if (s <= zb[std::size_t(k)]) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[std::size_t(k)] = q;
        zb[std::size_t(k)] = s;
        zb[std::size_t(k) + 1] = inf;
    }
    if (k < 0) {
        std::fill(out, out + n, inf);
        return;
    }
    std::size_t j = 0;
    for (std::size_t p = 0; p < n; ++p) {
        while (zb[j + 1] < double(p)) ++j;
        const double dq = double(p) - double(v[j]);
        out[p] = f[v[j]] + w2 * dq * dq;
    }
}

}  // namespace detail

/// Squared physical distance from every voxel to the nearest voxel of `sites`.
inline std::vector<double> squared_distance_field(Dims d, const std::vector<Voxel>& sites, Spacing sp) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> field(d.size(), inf);
    for (const auto& s : sites) field[(s[0] * d.height + s[1]) * d.width + s[2]] = 0.0;
    std::vector<double> line, out;
    std::vector<std::size_t> v;
    std::vector<double> zb;
    auto pass = [&](std::size_t n, std::size_t stride, double w, auto&& bases) {
        line.resize(n);
        out.resize(n);
        for (std::size_t base : bases) {
            for (std::size_t i = 0; i < n; ++i) line[i] = field[base + i * stride];
            detail::edt_line(line.data(), n, w * w, out.data(), v, zb);
            for (std::size_t i = 0; i < n; ++i) field[base + i * stride] = out[i];
        }
    };
    std::vector<std::size_t> bases;
    // x lines
    bases.clear();
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y) bases.push_back((z * d.height + y) * d.width);
    pass(d.width, 1, sp.x, bases);
    // y lines
    bases.clear();
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t x = 0; x < d.width; ++x) bases.push_back(z * d.height * d.width + x);
    pass(d.height, d.width, sp.y, bases);
    // z lines
    bases.clear();
    for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x) bases.push_back(y * d.width + x);
    pass(d.depth, d.height * d.width, sp.z, bases);
    return field;
}

/// Directed surface distances pred->gt followed by gt->pred, each in raster
/// order of the source surface.
inline std::vector<double> pooled_surface_distances(const MaskVolume& pred, const MaskVolume& gt, Spacing sp) {
    require_same_shape(pred, gt, "surface distance");
    const auto sa = extract_surface(pred);
    const auto sb = extract_surface(gt);
    const auto to_b = squared_distance_field(gt.dims, sb, sp);
    const auto to_a = squared_distance_field(pred.dims, sa, sp);
    const Dims d = pred.dims;
    std::vector<double> out;
    out.reserve(sa.size() + sb.size());
    for (const auto& s : sa) out.push_back(std::sqrt(to_b[(s[0] * d.height + s[1]) * d.width + s[2]]));
    for (const auto& s : sb) out.push_back(std::sqrt(to_a[(s[0] * d.height + s[1]) * d.width + s[2]]));
    return out;
}

/// Linear-interpolation percentile (q in [0, 100]) of a non-empty sample.
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InputError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * double(values.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

inline double mean_of(std::span<const double> values) {
    double sum = 0;
    for (double v : values) sum += v;
    return sum / double(values.size());
}

/// Average symmetric surface distance (mm) over the pooled distance set.
inline double assd(const MaskVolume& pred, const MaskVolume& gt, Spacing sp) {
    const auto d = pooled_surface_distances(pred, gt, sp);
    return mean_of(d);
}

/// 95th percentile (mm) of the pooled surface distance set.
inline double hd95(const MaskVolume& pred, const MaskVolume& gt, Spacing sp) {
    return percentile(pooled_surface_distances(pred, gt, sp), 95.0);
}

// --- paired test ------------------------------------------------------------

/**
 * Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are
 * dropped, tied magnitudes get mid-ranks. Exact null distribution for up to
 * 25 non-zero differences, otherwise the normal approximation with tie
 * correction (no continuity correction).
 */
inline double paired_wilcoxon(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InputError("paired_wilcoxon: samples have different lengths");
    if (a.size() < 6) throw InputError("paired_wilcoxon: needs at least 6 pairs");
    std::vector<double> diff;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] - b[i] != 0.0) diff.push_back(a[i] - b[i]);
    if (diff.empty()) throw DegenerateSampleError("paired_wilcoxon: all differences are zero");
    const std::size_t n = diff.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
    // Doubled mid-ranks keep everything integral.
    std::vector<std::size_t> rank2(n);
    double tie_term = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
        const std::size_t t = j - i + 1;
        for (std::size_t m = i; m <= j; ++m) rank2[order[m]] = i + j + 2;
        tie_term += double(t * t * t - t);
        i = j + 1;
    }
    std::size_t w2 = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (diff[i] > 0) w2 += rank2[i];

    if (n <= 25) {
        const std::size_t total2 = n * (n + 1);
        std::vector<double> ways(total2 + 1, 0.0);
        ways[0] = 1.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = total2; s + 1 > rank2[i]; --s) {
                ways[s] += ways[s - rank2[i]];
                if (s == rank2[i]) break;
            }
        const double all = std::ldexp(1.0, int(n));
        double lower = 0, upper = 0;
        for (std::size_t s = 0; s <= total2; ++s) {
            if (s <= w2) lower += ways[s];
            if (s >= w2) upper += ways[s];
        }
        return std::min(1.0, 2.0 * std::min(lower, upper) / all);
    }
    const double nn = double(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    if (var <= 0) throw DegenerateSampleError("paired_wilcoxon: zero variance");
    const double z = (double(w2) / 2.0 - mean) / std::sqrt(var);
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace ceseg
