#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/phantom.hpp"
#include "ceseg/preprocess.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

enum class Split { train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split tag '" + s + "'");
}

/// One manifest row. Paths are relative to the manifest's directory.
struct CaseEntry {
    std::string case_id;
    std::string image;
    std::string mask;
    Split split = Split::train;
    std::string modality = "mr";  ///< "mr" (z-score) or "ct" (clip + z-score)
};

struct Manifest {
    std::vector<CaseEntry> cases;
    std::filesystem::path root;  ///< directory relative paths resolve against

    std::vector<const CaseEntry*> split(Split s) const {
        std::vector<const CaseEntry*> out;
        for (const auto& c : cases)
            if (c.split == s) out.push_back(&c);
        return out;
    }
};

inline nlohmann::ordered_json manifest_json(const Manifest& m) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : m.cases) {
        nlohmann::ordered_json e;
        e["case_id"] = c.case_id;
        e["image"] = c.image;
        e["mask"] = c.mask;
        e["split"] = to_string(c.split);
        e["modality"] = c.modality;
        arr.push_back(std::move(e));
    }
    return arr;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
    detail::write_text_file(path, manifest_json(m).dump(2) + "\n");
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    const auto j = detail::read_json_file(path);
    if (!j.is_array()) throw FormatError(path.string() + ": manifest must be a JSON list of cases");
    Manifest m;
    m.root = path.parent_path();
    try {
        for (const auto& e : j) {
            CaseEntry c;
            c.case_id = e.at("case_id").get<std::string>();
            c.image = e.at("image").get<std::string>();
            c.mask = e.at("mask").get<std::string>();
            c.split = parse_split(e.at("split").get<std::string>());
            c.modality = e.value("modality", std::string("mr"));
            if (c.modality != "mr" && c.modality != "ct")
                throw FormatError(path.string() + ": unknown modality '" + c.modality + "'");
            m.cases.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return m;
}

/// A loaded, preprocessed case ready for training or evaluation.
struct LoadedCase {
    Volume image;
    MaskVolume mask;
};

inline LoadedCase load_case(const Manifest& m, const CaseEntry& c) {
    LoadedCase out{load_volume(m.root / c.image), load_mask(m.root / c.mask)};
    validate(out.image);
    validate_pair(out.image, out.mask);
    out.image = c.modality == "ct" ? preprocess_ct(std::move(out.image)) : preprocess_mr(std::move(out.image));
    return out;
}

/// Patient-wise shuffle of [0, n) driven by `seed`.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(idx[i - 1], idx[pick(rng)]);
    }
    return idx;
}

/// 60/20/20 train/val/test assignment by shuffled case order.
inline std::vector<Split> holdout_split(std::size_t n, std::uint64_t seed) {
    const auto order = shuffled_indices(n, seed);
    const auto n_train = std::size_t(std::llround(0.6 * double(n)));
    const auto n_val = std::size_t(std::llround(0.2 * double(n)));
    std::vector<Split> out(n, Split::test);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = order[i];
        out[c] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
    return out;
}

/// k-fold cross-validation assignment: fold f tests on the f-th chunk of the
/// shuffled order, validates on the next chunk and trains on the rest.
inline std::vector<std::vector<Split>> kfold_splits(std::size_t n, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("--folds must be >= 2");
    if (n < std::size_t(folds)) {
        throw ConfigError(std::to_string(n) + " case(s) cannot fill " + std::to_string(folds) + " folds");
    }
    const auto order = shuffled_indices(n, seed);
    const auto F = std::size_t(folds);
    std::vector<std::size_t> chunk(n);
    for (std::size_t i = 0; i < n; ++i) chunk[order[i]] = i * F / n;
    std::vector<std::vector<Split>> out(F, std::vector<Split>(n, Split::train));
    for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < n; ++c) {
            if (chunk[c] == f) out[f][c] = Split::test;
            else if (chunk[c] == (f + 1) % F) out[f][c] = Split::val;
        }
    return out;
}

/// Writes `cases` as `<id>.json/.raw` plus `<id>_mask.json/.raw` under
/// `dir` and returns a manifest tagged with `splits` (one per case).
inline Manifest write_cases(const std::vector<PhantomCase>& cases, const std::vector<Split>& splits,
                            const std::filesystem::path& dir) {
    if (cases.size() != splits.size()) throw InputError("one split tag per case is required");
    std::filesystem::create_directories(dir);
    Manifest m;
    m.root = dir;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const std::string id = cases[i].image.case_id;
        save_volume(cases[i].image, dir / id);
        save_mask(cases[i].mask, dir / (id + "_mask"));
        m.cases.push_back({id, id, id + "_mask", splits[i], "mr"});
    }
    return m;
}

/// Same cases, different split tags (for fold manifests).
inline Manifest with_splits(Manifest m, const std::vector<Split>& splits) {
    if (m.cases.size() != splits.size()) throw InputError("one split tag per case is required");
    for (std::size_t i = 0; i < splits.size(); ++i) m.cases[i].split = splits[i];
    return m;
}

}  // namespace ceseg
