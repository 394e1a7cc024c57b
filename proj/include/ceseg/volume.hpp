#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/tensor.hpp"

namespace ceseg {

/// Voxel size in millimetres; x runs along W, y along H and z along D.
struct Spacing {
    double x = 1.0, y = 1.0, z = 1.0;
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

struct Dims {
    std::size_t depth = 0, height = 0, width = 0;
    std::size_t size() const noexcept { return depth * height * width; }
    std::size_t plane() const noexcept { return height * width; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

/// Row-major (D, H, W) voxel grid.
template <typename V>
struct Grid {
    Dims dims{};
    Spacing spacing{};
    std::string case_id;
    std::vector<V> voxels;

    Grid() = default;
    Grid(Dims d, Spacing s, std::string id, V fill = V{})
        : dims(d), spacing(s), case_id(std::move(id)), voxels(d.size(), fill) {}

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
        return (z * dims.height + y) * dims.width + x;
    }
    V& at(std::size_t z, std::size_t y, std::size_t x) noexcept { return voxels[index(z, y, x)]; }
    const V& at(std::size_t z, std::size_t y, std::size_t x) const noexcept { return voxels[index(z, y, x)]; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Volume = Grid<float>;
using MaskVolume = Grid<std::uint8_t>;

inline void validate(const Volume& v) {
    if (v.dims.depth < 3) throw InputError("volume " + v.case_id + ": needs at least 3 slices");
    if (!(v.spacing.x > 0 && v.spacing.y > 0 && v.spacing.z > 0))
        throw InputError("volume " + v.case_id + ": spacing must be positive");
    if (!std::all_of(v.voxels.begin(), v.voxels.end(), [](float f) { return std::isfinite(f); }))
        throw InputError("volume " + v.case_id + ": non-finite voxel");
}

inline void validate_pair(const Volume& v, const MaskVolume& m) {
    if (v.dims != m.dims || v.spacing != m.spacing)
        throw InputError("case " + v.case_id + ": image and mask disagree on shape or spacing");
    if (!std::all_of(m.voxels.begin(), m.voxels.end(), [](std::uint8_t b) { return b <= 1; }))
        throw InputError("mask " + m.case_id + ": labels must be 0 or 1");
}

/// Slices [first, first + count) as a one-channel stack.
template <typename T, typename V>
Tensor<T> slice_stack(const Grid<V>& g, std::size_t first, std::size_t count) {
    if (first + count > g.dims.depth) throw InputError("slice_stack: range exceeds volume depth");
    Tensor<T> t(1, count, g.dims.height, g.dims.width);
    const std::size_t plane = g.dims.plane();
    std::transform(g.voxels.begin() + std::ptrdiff_t(first * plane),
                   g.voxels.begin() + std::ptrdiff_t((first + count) * plane), t.data(),
                   [](V v) { return static_cast<T>(v); });
    return t;
}

// --- on-disk format ---------------------------------------------------------
//
// <stem>.json : {"case_id", "shape": [D,H,W], "spacing_mm": [x,y,z],
//                "dtype": "f32"|"u8", "order": "row-major D,H,W"}
// <stem>.raw  : little-endian payload.

namespace detail {

template <typename V>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<V, float>) return "f32";
    else return "u8";
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + p.string());
    out << text;
    if (!out) throw RuntimeError("short write to " + p.string());
}

}  // namespace detail

/// Strips a trailing .json/.raw so either file (or the bare stem) can be named.
inline std::filesystem::path volume_stem(std::filesystem::path p) {
    if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
    return p;
}

template <typename V>
void save_grid(const Grid<V>& g, const std::filesystem::path& where) {
    static_assert(std::endian::native == std::endian::little, "payload writer assumes a little-endian host");
    const auto stem = volume_stem(where);
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    nlohmann::ordered_json meta;
    meta["case_id"] = g.case_id;
    meta["shape"] = {g.dims.depth, g.dims.height, g.dims.width};
    meta["spacing_mm"] = {g.spacing.x, g.spacing.y, g.spacing.z};
    meta["dtype"] = detail::dtype_name<V>();
    meta["order"] = "row-major D,H,W";
    detail::write_text_file(stem.string() + ".json", meta.dump(2) + "\n");
    std::ofstream raw(stem.string() + ".raw", std::ios::binary);
    if (!raw) throw RuntimeError("cannot write " + stem.string() + ".raw");
    raw.write(reinterpret_cast<const char*>(g.voxels.data()), std::streamsize(g.voxels.size() * sizeof(V)));
    if (!raw) throw RuntimeError("short write to " + stem.string() + ".raw");
}

template <typename V>
Grid<V> load_grid(const std::filesystem::path& where) {
    const auto stem = volume_stem(where);
    const auto meta = detail::read_json_file(stem.string() + ".json");
    Grid<V> g;
    try {
        for (const char* key : {"shape", "spacing_mm", "dtype"})
            if (!meta.contains(key)) throw FormatError(stem.string() + ".json: missing field '" + key + "'");
        const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
        const auto spacing = meta.at("spacing_mm").get<std::vector<double>>();
        if (shape.size() != 3) throw FormatError(stem.string() + ".json: shape must have 3 entries");
        if (spacing.size() != 3) throw FormatError(stem.string() + ".json: spacing_mm must have 3 entries");
        if (meta.at("dtype").get<std::string>() != detail::dtype_name<V>())
            throw FormatError(stem.string() + ".json: dtype " + meta.at("dtype").get<std::string>() +
                              ", expected " + detail::dtype_name<V>());
        if (meta.contains("order") && meta.at("order").get<std::string>() != "row-major D,H,W")
            throw FormatError(stem.string() + ".json: unsupported voxel order");
        g.dims = {shape[0], shape[1], shape[2]};
        g.spacing = {spacing[0], spacing[1], spacing[2]};
        g.case_id = meta.value("case_id", stem.filename().string());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(stem.string() + ".json: " + e.what());
    }
    std::ifstream raw(stem.string() + ".raw", std::ios::binary | std::ios::ate);
    if (!raw) throw FormatError("cannot open " + stem.string() + ".raw");
    const auto bytes = std::size_t(raw.tellg());
    if (bytes != g.dims.size() * sizeof(V))
        throw FormatError(stem.string() + ".raw: payload is " + std::to_string(bytes) + " bytes, header implies " +
                          std::to_string(g.dims.size() * sizeof(V)));
    raw.seekg(0);
    g.voxels.resize(g.dims.size());
    raw.read(reinterpret_cast<char*>(g.voxels.data()), std::streamsize(bytes));
    return g;
}

inline void save_volume(const Volume& v, const std::filesystem::path& p) { save_grid(v, p); }
inline Volume load_volume(const std::filesystem::path& p) { return load_grid<float>(p); }
inline void save_mask(const MaskVolume& m, const std::filesystem::path& p) { save_grid(m, p); }
inline MaskVolume load_mask(const std::filesystem::path& p) {
    MaskVolume m = load_grid<std::uint8_t>(p);
    for (auto b : m.voxels)
        if (b > 1) throw FormatError("mask " + m.case_id + ": labels must be 0 or 1");
    return m;
}

}  // namespace ceseg
