#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/model_config.hpp"
#include "ceseg/phantom.hpp"
#include "ceseg/training.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

/// File locations. Relative entries in a config file resolve against the
/// file's directory; empty manifest/checkpoint fall back to defaults below.
struct PathsConfig {
    std::string data_dir = "data";  ///< gen-data output
    std::string manifest;           ///< default: <data_dir>/manifest.json
    std::string out_dir = "run";    ///< train/eval/report output
    std::string checkpoint;         ///< eval input; default: <out_dir>/best.ckpt

    friend bool operator==(const PathsConfig&, const PathsConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathsConfig, data_dir, manifest, out_dir, checkpoint)

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    PhantomSpec phantom;
    PathsConfig paths;

    std::filesystem::path manifest_path() const {
        return paths.manifest.empty() ? std::filesystem::path(paths.data_dir) / "manifest.json"
                                      : std::filesystem::path(paths.manifest);
    }
    std::filesystem::path checkpoint_path() const {
        return paths.checkpoint.empty() ? std::filesystem::path(paths.out_dir) / "best.ckpt"
                                        : std::filesystem::path(paths.checkpoint);
    }

    void validate() const {
        model.validate();
        train.validate(model);
        phantom.validate();
        if (phantom.height % int(model.spatial_multiple()) || phantom.width % int(model.spatial_multiple()))
            throw ConfigError("phantom in-plane size must be divisible by 2^depth = " +
                              std::to_string(model.spatial_multiple()));
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["model"] = nlohmann::json(c.model);
    j["train"] = nlohmann::json(c.train);
    j["phantom"] = nlohmann::json(c.phantom);
    j["paths"] = nlohmann::json(c.paths);
    return j;
}

namespace detail {

/// Overlays `over` onto `base`, rejecting keys `base` does not have and
/// values whose JSON type differs (integers may not become fractions).
inline void merge_strict(nlohmann::json& base, const nlohmann::json& over, const std::string& where) {
    if (!over.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : over.items()) {
        const std::string name = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + name + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_strict(slot, value, name);
            continue;
        }
        const bool ok = slot.is_boolean()  ? value.is_boolean()
                        : slot.is_string() ? value.is_string()
                        : slot.is_number_integer() ? value.is_number_integer() && (slot.is_number_unsigned() ? value >= 0 : true)
                        : slot.is_number() ? value.is_number()
                                           : false;
        if (!ok) throw ConfigError("config key '" + name + "' has the wrong type");
        slot = value;
    }
}

inline void resolve(std::string& p, const std::filesystem::path& base) {
    if (p.empty()) return;
    std::filesystem::path q(p);
    if (q.is_relative()) q = base / q;
    p = q.lexically_normal().string();
}

}  // namespace detail

/**
 * Builds a RunConfig from, in increasing precedence: the profile defaults,
 * the config file (if any) and `profile_override`. Paths come back absolute.
 *
 * The profile is taken from `profile_override`, else from the file's
 * train.profile, else paper_defaults.
 */
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                 const std::optional<std::string>& profile_override = std::nullopt) {
    nlohmann::json user = nlohmann::json::object();
    std::filesystem::path base = std::filesystem::current_path();
    if (file) {
        try {
            user = detail::read_json_file(*file);
        } catch (const FormatError& e) {
            throw ConfigError(std::string("config file: ") + e.what());
        }
        if (!user.is_object()) throw ConfigError(file->string() + ": config must be a JSON object");
        base = std::filesystem::absolute(*file).parent_path();
    }
    std::string profile = "paper_defaults";
    if (user.contains("train") && user["train"].is_object() && user["train"].contains("profile") &&
        user["train"]["profile"].is_string())
        profile = user["train"]["profile"].get<std::string>();
    if (profile_override) profile = *profile_override;

    RunConfig defaults;
    defaults.train = profile_defaults(parse_profile(profile));
    nlohmann::json merged = {{"model", nlohmann::json(defaults.model)},
                             {"train", nlohmann::json(defaults.train)},
                             {"phantom", nlohmann::json(defaults.phantom)},
                             {"paths", nlohmann::json(defaults.paths)}};
    detail::merge_strict(merged, user, "");
    merged["train"]["profile"] = profile;

    RunConfig c;
    try {
        c.model = merged.at("model").get<ModelConfig>();
        c.train = merged.at("train").get<TrainConfig>();
        c.phantom = merged.at("phantom").get<PhantomSpec>();
        c.paths = merged.at("paths").get<PathsConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    detail::resolve(c.paths.data_dir, base);
    detail::resolve(c.paths.manifest, base);
    detail::resolve(c.paths.out_dir, base);
    detail::resolve(c.paths.checkpoint, base);
    return c;
}

}  // namespace ceseg
