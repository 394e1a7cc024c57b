#pragma once

// Minimal raster plots written with libpng: paired per-case scatter, loss
// curves and three-view contour overlays.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ceseg/errors.hpp"
#include "ceseg/volume.hpp"

namespace ceseg::plot {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrey{180, 180, 180};
inline constexpr Rgb kGreen{40, 200, 60};
inline constexpr Rgb kRed{225, 50, 40};
inline constexpr Rgb kBlue{40, 110, 235};
inline constexpr std::array<Rgb, 4> kPalette{kBlue, kRed, kGreen, Rgb{200, 140, 20}};

class Canvas {
public:
    Canvas(int width, int height, Rgb bg = kWhite)
        : w_(width), h_(height), px_(std::size_t(width) * std::size_t(height) * 3) {
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x) set(x, y, bg);
    }

    int width() const noexcept { return w_; }
    int height() const noexcept { return h_; }

    void set(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
        auto* p = &px_[(std::size_t(y) * std::size_t(w_) + std::size_t(x)) * 3];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void line(int x0, int y0, int x1, int y1, Rgb c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    void marker(int x, int y, Rgb c, int r = 2) { fill_rect(x - r, y - r, x + r, y + r, c); }

    /// Digits, '.', '-' and ' ' in a 3x5 font scaled by `scale`.
    void text(int x, int y, const std::string& s, Rgb c, int scale = 2) {
        static const std::array<std::uint16_t, 10> digits = {0x7B6F, 0x2C97, 0x73E7, 0x73CF, 0x5BC9,
                                                            0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF};
        for (char ch : s) {
            std::uint16_t bits = 0;
            if (ch >= '0' && ch <= '9') bits = digits[std::size_t(ch - '0')];
            else if (ch == '.') bits = 0x0002;
            else if (ch == '-') bits = 0x01C0;
            for (int r = 0; r < 5; ++r)
                for (int col = 0; col < 3; ++col)
                    if (bits & (1u << (14 - (r * 3 + col))))
                        fill_rect(x + col * scale, y + r * scale, x + col * scale + scale - 1, y + r * scale + scale - 1, c);
            x += 4 * scale;
        }
    }

    void save(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        FILE* fp = std::fopen(path.string().c_str(), "wb");
        if (!fp) throw RuntimeError("cannot write " + path.string());
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info || setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            std::fclose(fp);
            throw RuntimeError("libpng failed writing " + path.string());
        }
        png_init_io(png, fp);
        png_set_IHDR(png, info, png_uint_32(w_), png_uint_32(h_), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < h_; ++y)
            png_write_row(png, const_cast<png_bytep>(&px_[std::size_t(y) * std::size_t(w_) * 3]));
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
    }

private:
    int w_, h_;
    std::vector<std::uint8_t> px_;
};

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, std::abs(v) >= 10 ? "%.0f" : "%.2f", v);
    return buf;
}

/// Plot area with data-to-pixel mapping and labelled frame.
struct Axes {
    int left = 70, top = 20, right = 20, bottom = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    int w = 0, h = 0;

    int px(double x) const { return left + int(std::lround((x - x0) / (x1 - x0) * (w - left - right))); }
    int py(double y) const { return h - bottom - int(std::lround((y - y0) / (y1 - y0) * (h - top - bottom))); }

    void draw(Canvas& c) const {
        c.line(left, top, left, h - bottom, kBlack);
        c.line(left, h - bottom, w - right, h - bottom, kBlack);
        for (int i = 0; i <= 4; ++i) {
            const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
            c.line(px(xv), h - bottom, px(xv), h - bottom + 5, kBlack);
            c.text(px(xv) - 12, h - bottom + 10, tick_label(xv), kBlack);
            c.line(left - 5, py(yv), left, py(yv), kBlack);
            c.text(8, py(yv) - 5, tick_label(yv), kBlack);
        }
    }
};

inline std::pair<double, double> padded_range(double lo, double hi) {
    if (!(hi > lo)) {
        lo -= 1;
        hi += 1;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

/// Per-case scatter of `a` (x axis) against `b` (y axis) with the identity line.
inline void paired_scatter(const std::vector<double>& a, const std::vector<double>& b,
                           const std::filesystem::path& path) {
    if (a.size() != b.size() || a.empty()) throw InputError("paired scatter needs two equal-length, non-empty series");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < a.size(); ++i) {
        lo = std::min({lo, a[i], b[i]});
        hi = std::max({hi, a[i], b[i]});
    }
    const auto [r0, r1] = padded_range(lo, hi);
    Canvas c(480, 480);
    Axes ax{.x0 = r0, .x1 = r1, .y0 = r0, .y1 = r1, .w = c.width(), .h = c.height()};
    c.line(ax.px(r0), ax.py(r0), ax.px(r1), ax.py(r1), kGrey);
    ax.draw(c);
    for (std::size_t i = 0; i < a.size(); ++i) c.marker(ax.px(a[i]), ax.py(b[i]), b[i] >= a[i] ? kBlue : kRed, 3);
    c.save(path);
}

/// One polyline per series; x is the 1-based index.
inline void line_chart(const std::vector<std::vector<double>>& series, const std::filesystem::path& path) {
    std::size_t n = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        n = std::max(n, s.size());
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (n == 0) throw InputError("line chart needs at least one non-empty series");
    const auto [y0, y1] = padded_range(lo, hi);
    Canvas c(640, 400);
    Axes ax{.x0 = 1, .x1 = std::max(2.0, double(n)), .y0 = y0, .y1 = y1, .w = c.width(), .h = c.height()};
    ax.draw(c);
    for (std::size_t k = 0; k < series.size(); ++k) {
        const Rgb col = kPalette[k % kPalette.size()];
        const auto& s = series[k];
        for (std::size_t i = 1; i < s.size(); ++i)
            c.line(ax.px(double(i)), ax.py(s[i - 1]), ax.px(double(i + 1)), ax.py(s[i]), col);
        if (s.size() == 1) c.marker(ax.px(1), ax.py(s[0]), col);
    }
    c.save(path);
}

/**
 * Transversal, coronal and sagittal panels through the centre of the ground
 * truth, side by side. Grey image, contours: ground truth green, then one
 * colour per entry of `preds` (red, blue, ...).
 */
inline void overlay_panels(const Volume& image, const MaskVolume& gt, const std::vector<const MaskVolume*>& preds,
                           const std::filesystem::path& path, int scale = 3) {
    const Dims d = image.dims;
    if (!(gt.dims == d)) throw InputError("overlay: mask and image shapes differ");
    for (const auto* p : preds)
        if (!p || !(p->dims == d)) throw InputError("overlay: prediction shape differs from the image");

    // Centre of mass of the ground truth, falling back to the volume centre.
    double sz = 0, sy = 0, sx = 0, n = 0;
    for (std::size_t z = 0; z < d.depth; ++z)
        for (std::size_t y = 0; y < d.height; ++y)
            for (std::size_t x = 0; x < d.width; ++x)
                if (gt.at(z, y, x)) {
                    sz += double(z);
                    sy += double(y);
                    sx += double(x);
                    n += 1;
                }
    const std::size_t cz = n ? std::size_t(sz / n) : d.depth / 2;
    const std::size_t cy = n ? std::size_t(sy / n) : d.height / 2;
    const std::size_t cx = n ? std::size_t(sx / n) : d.width / 2;

    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (float v : image.voxels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi > lo ? hi - lo : 1.0f;

    // Rows of each view: transversal (y, x), coronal (z, x), sagittal (z, y).
    // Depth is stretched by the spacing ratio so views keep their aspect.
    const int zscale = std::max(1, int(std::lround(scale * image.spacing.z / image.spacing.x)));
    struct View {
        std::size_t rows, cols;
        int rs, cs;
        std::function<std::size_t(std::size_t, std::size_t)> index;
    };
    const std::array<View, 3> views = {
        View{d.height, d.width, scale, scale, [&](std::size_t r, std::size_t c) { return image.index(cz, r, c); }},
        View{d.depth, d.width, zscale, scale, [&](std::size_t r, std::size_t c) { return image.index(d.depth - 1 - r, cy, c); }},
        View{d.depth, d.height, zscale, scale, [&](std::size_t r, std::size_t c) { return image.index(d.depth - 1 - r, c, cx); }},
    };

    int total_w = 0, total_h = 0;
    for (const auto& v : views) {
        total_w += int(v.cols) * v.cs + 8;
        total_h = std::max(total_h, int(v.rows) * v.rs);
    }
    Canvas c(total_w, total_h, kBlack);
    int ox = 0;
    for (const auto& v : views) {
        for (std::size_t r = 0; r < v.rows; ++r)
            for (std::size_t col = 0; col < v.cols; ++col) {
                const auto g = std::uint8_t(std::clamp((image.voxels[v.index(r, col)] - lo) / span * 255.0f, 0.0f, 255.0f));
                c.fill_rect(ox + int(col) * v.cs, int(r) * v.rs, ox + int(col + 1) * v.cs - 1, int(r + 1) * v.rs - 1,
                            Rgb{g, g, g});
            }
        auto contour = [&](const MaskVolume& m, Rgb colour) {
            auto on = [&](std::ptrdiff_t r, std::ptrdiff_t col) {
                if (r < 0 || col < 0 || r >= std::ptrdiff_t(v.rows) || col >= std::ptrdiff_t(v.cols)) return false;
                return m.voxels[v.index(std::size_t(r), std::size_t(col))] != 0;
            };
            for (std::ptrdiff_t r = 0; r < std::ptrdiff_t(v.rows); ++r)
                for (std::ptrdiff_t col = 0; col < std::ptrdiff_t(v.cols); ++col)
                    if (on(r, col) && !(on(r - 1, col) && on(r + 1, col) && on(r, col - 1) && on(r, col + 1)))
                        c.fill_rect(ox + int(col) * v.cs, int(r) * v.rs, ox + int(col + 1) * v.cs - 1,
                                    int(r + 1) * v.rs - 1, colour);
        };
        contour(gt, kGreen);
        for (std::size_t k = 0; k < preds.size(); ++k) contour(*preds[k], k == 0 ? kRed : kPalette[(k - 1) % kPalette.size()]);
        ox += int(v.cols) * v.cs + 8;
    }
    c.save(path);
}

}  // namespace ceseg::plot
