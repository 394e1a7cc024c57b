#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/model.hpp"

namespace ceseg {

/**
 * Checkpoint archive layout (all integers u32 little-endian):
 *
 *   "CESEGCKP" | version | json_len | json metadata (UTF-8)
 *   | entry_count | entries...
 *
 * entry: name_len | name | ndim | dims[ndim] | f32 values (little-endian)
 *
 * The metadata holds the ModelConfig under "model" plus whatever the caller
 * adds (variant, epoch, optimizer settings). Entries hold every parameter
 * and buffer of the model, and optionally optimizer state under "optim.".
 */
struct ArchiveEntry {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

struct Archive {
    nlohmann::ordered_json meta;
    std::map<std::string, ArchiveEntry> entries;
    std::vector<std::string> order;  ///< insertion order, which is the write order

    void put(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> values) {
        if (!entries.count(name)) order.push_back(name);
        entries[name] = {std::move(dims), std::move(values)};
    }
    const ArchiveEntry& get(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw FormatError("checkpoint has no entry '" + name + "'");
        return it->second;
    }
};

namespace detail {

inline constexpr char kMagic[8] = {'C', 'E', 'S', 'E', 'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw FormatError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in[pos + std::size_t(i)])) << (8 * i);
    pos += 4;
    return v;
}

}  // namespace detail

inline std::string serialize_archive(const Archive& a) {
    static_assert(std::endian::native == std::endian::little, "float payloads are written in host order");
    std::string out(detail::kMagic, 8);
    detail::put_u32(out, detail::kVersion);
    const std::string meta = a.meta.dump();
    detail::put_u32(out, std::uint32_t(meta.size()));
    out += meta;
    detail::put_u32(out, std::uint32_t(a.order.size()));
    for (const auto& name : a.order) {
        const auto& e = a.entries.at(name);
        detail::put_u32(out, std::uint32_t(name.size()));
        out += name;
        detail::put_u32(out, std::uint32_t(e.dims.size()));
        for (auto d : e.dims) detail::put_u32(out, d);
        out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
    }
    return out;
}

inline Archive parse_archive(const std::string& in) {
    if (in.size() < 12 || std::memcmp(in.data(), detail::kMagic, 8) != 0) throw FormatError("not a checkpoint archive");
    std::size_t pos = 8;
    if (detail::get_u32(in, pos) != detail::kVersion) throw FormatError("unsupported checkpoint version");
    Archive a;
    const std::uint32_t meta_len = detail::get_u32(in, pos);
    if (pos + meta_len > in.size()) throw FormatError("checkpoint truncated");
    try {
        a.meta = nlohmann::ordered_json::parse(in.substr(pos, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what());
    }
    pos += meta_len;
    const std::uint32_t n = detail::get_u32(in, pos);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t len = detail::get_u32(in, pos);
        if (pos + len > in.size()) throw FormatError("checkpoint truncated");
        std::string name = in.substr(pos, len);
        pos += len;
        const std::uint32_t ndim = detail::get_u32(in, pos);
        std::vector<std::uint32_t> dims(ndim);
        std::size_t count = 1;
        for (auto& d : dims) {
            d = detail::get_u32(in, pos);
            count *= d;
        }
        if (pos + count * sizeof(float) > in.size()) throw FormatError("checkpoint truncated in '" + name + "'");
        std::vector<float> values(count);
        std::memcpy(values.data(), in.data() + pos, count * sizeof(float));
        pos += count * sizeof(float);
        a.put(name, std::move(dims), std::move(values));
    }
    if (pos != in.size()) throw FormatError("trailing bytes after checkpoint entries");
    return a;
}

inline void write_archive(const Archive& a, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw RuntimeError("cannot write " + tmp);
        const std::string bytes = serialize_archive(a);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw RuntimeError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_archive(bytes);
}

/// Adds every parameter and buffer of `model` plus its config to `a`.
template <typename T>
void store_model(Archive& a, SegmentationModel<T>& model) {
    a.meta["model"] = nlohmann::json(model.config());
    a.meta["variant"] = to_string(model.variant());
    model.visit([&](nn::Parameter<T>& p) {
        std::vector<std::uint32_t> dims(p.dims.begin(), p.dims.end());
        std::vector<float> v(p.value.begin(), p.value.end());
        a.put(p.name, std::move(dims), std::move(v));
    });
}

/// Rebuilds a model from the archive's config and copies every entry in.
template <typename T>
SegmentationModel<T> restore_model(const Archive& a) {
    ModelConfig cfg;
    try {
        cfg = nlohmann::json(a.meta.at("model")).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint model config: ") + e.what());
    }
    const Variant variant = parse_variant(a.meta.value("variant", std::string("ce")));
    SegmentationModel<T> model(cfg, variant, 0);
    model.visit([&](nn::Parameter<T>& p) {
        const auto& e = a.get(p.name);
        if (e.values.size() != p.value.size() || !std::equal(e.dims.begin(), e.dims.end(), p.dims.begin(), p.dims.end()))
            throw FormatError("checkpoint entry '" + p.name + "' has the wrong shape");
        std::copy(e.values.begin(), e.values.end(), p.value.begin());
    });
    return model;
}

template <typename T>
void save_model(SegmentationModel<T>& model, const std::filesystem::path& path) {
    Archive a;
    store_model(a, model);
    write_archive(a, path);
}

template <typename T>
SegmentationModel<T> load_model(const std::filesystem::path& path) {
    return restore_model<T>(read_archive(path));
}

}  // namespace ceseg
