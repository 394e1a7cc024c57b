#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ceseg/checkpoint.hpp"
#include "ceseg/dataset.hpp"
#include "ceseg/errors.hpp"
#include "ceseg/metrics.hpp"
#include "ceseg/model.hpp"
#include "ceseg/preprocess.hpp"
#include "ceseg/report.hpp"

namespace ceseg {

enum class Profile { paper_defaults, desk_scale };

inline std::string to_string(Profile p) { return p == Profile::desk_scale ? "desk_scale" : "paper_defaults"; }

inline Profile parse_profile(const std::string& s) {
    if (s == "paper_defaults") return Profile::paper_defaults;
    if (s == "desk_scale") return Profile::desk_scale;
    throw ConfigError("unknown profile '" + s + "' (expected paper_defaults or desk_scale)");
}

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.001;
    int batch_slices = 50;  ///< slices per step, all from one volume
    int epochs = 300;
    std::uint64_t seed = 0;
    double aux_loss_weight = 1.0;  ///< weight of dice(P) next to dice(P_CE); ignored by the baseline
    std::string profile = "paper_defaults";
    std::string variant = "ce";
    bool augment = true;
    double smooth = 1e-5;

    void validate(const ModelConfig& model) const {
        auto require = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("TrainConfig: " + what);
        };
        require(lr > 0, "lr must be > 0");
        require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
        require(weight_decay >= 0, "weight_decay must be >= 0");
        require(epochs >= 1, "epochs must be >= 1");
        require(batch_slices >= 2 * (model.l + 1),
                "batch_slices must be >= 2(l+1) = " + std::to_string(2 * (model.l + 1)));
        require(aux_loss_weight >= 0, "aux_loss_weight must be >= 0");
        require(smooth > 0, "smooth must be > 0");
        parse_profile(profile);
        parse_variant(variant);
    }

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, momentum, weight_decay, batch_slices, epochs, seed,
                                                aux_loss_weight, profile, variant, augment, smooth)

/// Profile defaults; fields other than epochs and batch_slices are shared.
inline TrainConfig profile_defaults(Profile p) {
    TrainConfig c;
    c.profile = to_string(p);
    if (p == Profile::desk_scale) {
        c.epochs = 60;
        c.batch_slices = 16;
    }
    return c;
}

// --- optimizer --------------------------------------------------------------

/**
 * SGD with heavy-ball momentum. Weight decay enters as lambda * theta added to
 * the gradient; buffers start at zero, so the first step equals plain SGD.
 *
 *   v <- mu v + (g + lambda theta),  theta <- theta - lr v
 */
template <typename T>
class SGD {
public:
    SGD(double lr, double momentum, double weight_decay) : lr_(lr), momentum_(momentum), wd_(weight_decay) {}

    void step(SegmentationModel<T>& model) {
        model.visit([&](nn::Parameter<T>& p) {
            if (!p.learnable) return;
            auto& v = buffers_[p.name];
            if (v.size() != p.size()) v.assign(p.size(), T(0));
            const T mu = T(momentum_), wd = T(wd_), lr = T(lr_);
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = mu * v[i] + (p.grad[i] + wd * p.value[i]);
                p.value[i] -= lr * v[i];
            }
        });
    }

    const std::map<std::string, std::vector<T>>& buffers() const noexcept { return buffers_; }
    std::map<std::string, std::vector<T>>& buffers() noexcept { return buffers_; }
    double lr() const noexcept { return lr_; }

private:
    double lr_, momentum_, wd_;
    std::map<std::string, std::vector<T>> buffers_;
};

// --- parameter accounting ---------------------------------------------------

struct ParameterCounts {
    std::size_t backbone = 0;
    std::size_t ce_block = 0;
    std::size_t total = 0;
    std::map<std::string, std::size_t> groups;  ///< per ParamGroup
};

/// Learnable scalars only; batch-norm running statistics are not counted.
template <typename T>
ParameterCounts count_parameters(SegmentationModel<T>& model) {
    ParameterCounts c;
    for (ParamGroup g : SegmentationModel<T>::kGroups) {
        std::size_t n = 0;
        model.visit_group(g, [&](nn::Parameter<T>& p) {
            if (p.learnable) n += p.size();
        });
        c.groups[to_string(g)] = n;
        if (g == ParamGroup::backbone) c.backbone += n;
        else c.ce_block += n;
    }
    c.total = c.backbone + c.ce_block;
    return c;
}

inline nlohmann::ordered_json to_json(const ParameterCounts& c) {
    nlohmann::ordered_json j;
    j["backbone"] = c.backbone;
    j["ce_block"] = c.ce_block;
    j["total"] = c.total;
    j["ce_over_backbone"] = c.backbone ? double(c.ce_block) / double(c.backbone) : 0.0;
    j["groups"] = c.groups;
    return j;
}

// --- helpers ----------------------------------------------------------------

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Identifies everything that determines a training trajectory except the
/// epoch budget, so a run can be resumed with more epochs.
inline std::string config_hash(const ModelConfig& model, const TrainConfig& train, const Manifest& manifest) {
    nlohmann::json t = train;
    t.erase("epochs");
    const nlohmann::ordered_json j = {{"model", nlohmann::json(model)}, {"train", t}, {"cases", manifest_json(manifest)}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

/// Worker count for pools: CESEG_THREADS if set and positive, else the number
/// of hardware threads.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("CESEG_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return std::size_t(v);
        throw ConfigError(std::string("CESEG_THREADS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// exception after all workers stop.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

template <typename T>
Tensor<T> mask_stack(const MaskVolume& m, std::size_t first, std::size_t count) {
    return slice_stack<T>(m, first, count);
}

/// Probabilities >= threshold become foreground.
template <typename T>
MaskVolume binarize(std::span<const T> prob, Dims dims, Spacing spacing, const std::string& case_id, double threshold) {
    if (prob.size() != dims.size()) throw InputError("binarize: probability count does not match the volume shape");
    MaskVolume out(dims, spacing, case_id);
    const T thr = T(threshold);
    for (std::size_t i = 0; i < prob.size(); ++i) out.voxels[i] = prob[i] >= thr ? 1 : 0;
    return out;
}

/// Whole-volume inference of every slice in one stack, then binarize().
template <typename T>
MaskVolume predict_mask(const SegmentationModel<T>& model, const Volume& image) {
    const Tensor<T> x = slice_stack<T>(image, 0, image.dims.depth);
    const ModelOutput<T> out = model.infer(x);
    return binarize<T>(out.final.values(), image.dims, image.spacing, image.case_id, model.config().fg_threshold);
}

// --- training ---------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_dsc = 0;
    double lr = 0;
    double wall_s = 0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_dsc", r.val_dsc}, {"lr", r.lr}, {"wall_s", r.wall_s}};
}

struct TrainResult {
    std::vector<EpochRecord> history;  ///< epochs run by this call
    int last_epoch = 0;
    int best_epoch = 0;
    double best_val_dsc = -1;
    std::filesystem::path last_checkpoint, best_checkpoint, log;
};

struct TrainHooks {
    /// Called after every optimizer step with (epoch, case id, loss).
    std::function<void(int, const std::string&, double)> on_step;
};

namespace detail {

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch), 0x7a11u};
    return std::mt19937_64(seq);
}

template <typename T>
void store_optimizer(Archive& a, const SGD<T>& opt) {
    for (const auto& [name, v] : opt.buffers())
        a.put("optim.momentum." + name, {std::uint32_t(v.size())}, std::vector<float>(v.begin(), v.end()));
}

template <typename T>
void restore_optimizer(const Archive& a, SegmentationModel<T>& model, SGD<T>& opt) {
    model.visit([&](nn::Parameter<T>& p) {
        if (!p.learnable) return;
        const auto key = "optim.momentum." + p.name;
        if (!a.entries.count(key)) return;
        const auto& e = a.get(key);
        if (e.values.size() != p.size()) throw FormatError("checkpoint entry '" + key + "' has the wrong size");
        opt.buffers()[p.name].assign(e.values.begin(), e.values.end());
    });
}

inline void write_log(const std::filesystem::path& p, const std::vector<EpochRecord>& records) {
    std::string text;
    for (const auto& r : records) text += to_json(r).dump() + "\n";
    write_text_file(p, text);
}

inline std::vector<EpochRecord> read_log(const std::filesystem::path& p) {
    std::vector<EpochRecord> out;
    std::ifstream in(p);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("epoch").get<int>(), j.at("train_loss").get<double>(), j.at("val_dsc").get<double>(),
                           j.at("lr").get<double>(), j.at("wall_s").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(p.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace detail

/// One SGD step on a stack; returns {total, dice(final), dice(original)}.
template <typename T>
std::array<double, 3> train_step(SegmentationModel<T>& model, SGD<T>& opt, const Tensor<T>& x,
                                 const Tensor<T>& target, const TrainConfig& cfg) {
    const ModelOutput<T> out = model.forward(x);
    const double l_final = dice_loss<T>(out.final.values(), target.values(), cfg.smooth);
    const bool aux = model.has_ce() && cfg.aux_loss_weight > 0;
    const double l_orig = aux ? dice_loss<T>(out.original.values(), target.values(), cfg.smooth) : 0.0;
    const double total = l_final + (aux ? cfg.aux_loss_weight * l_orig : 0.0);
    if (!std::isfinite(total)) return {total, l_final, l_orig};

    Tensor<T> d_final(out.final.shape());
    const auto g = dice_loss_gradient<T>(out.final.values(), target.values(), cfg.smooth);
    std::copy(g.begin(), g.end(), d_final.data());
    Tensor<T> d_orig;
    if (aux) {
        d_orig = Tensor<T>(out.original.shape());
        const auto h = dice_loss_gradient<T>(out.original.values(), target.values(), cfg.smooth, cfg.aux_loss_weight);
        std::copy(h.begin(), h.end(), d_orig.data());
    }
    model.zero_grad();
    model.backward(d_final, d_orig);
    opt.step(model);
    return {total, l_final, l_orig};
}

/// Mean 3D DSC of thresholded predictions over `cases`.
template <typename T>
double mean_dsc(const SegmentationModel<T>& model, const std::vector<LoadedCase>& cases) {
    if (cases.empty()) return 0.0;
    double sum = 0;
    for (const auto& c : cases) sum += dsc_3d(predict_mask(model, c.image), c.mask);
    return sum / double(cases.size());
}

/**
 * Trains `model_cfg` on the manifest's train split, validating on its val
 * split after every epoch. Writes `train_log.jsonl`, `last.ckpt` and
 * `best.ckpt` (highest validation DSC, earliest epoch on ties) to out_dir.
 *
 * Each epoch draws its randomness from (seed, epoch) alone, so resuming from
 * last.ckpt replays the uninterrupted run exactly.
 */
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Manifest& manifest,
                         const std::filesystem::path& out_dir, bool resume = false, const TrainHooks& hooks = {}) {
    using T = float;
    model_cfg.validate();
    cfg.validate(model_cfg);
    const Variant variant = parse_variant(cfg.variant);
    const auto train_entries = manifest.split(Split::train);
    const auto val_entries = manifest.split(Split::val);
    if (train_entries.empty()) throw InputError("manifest has no train split");

    std::vector<LoadedCase> train_cases, val_cases;
    for (const auto* e : train_entries) train_cases.push_back(load_case(manifest, *e));
    for (const auto* e : val_entries) val_cases.push_back(load_case(manifest, *e));
    for (const auto& c : train_cases) {
        const auto& d = c.image.dims;
        if (d.height % model_cfg.spatial_multiple() || d.width % model_cfg.spatial_multiple())
            throw InputError("case " + c.image.case_id + ": in-plane size not divisible by " +
                             std::to_string(model_cfg.spatial_multiple()));
        if (d.depth < std::size_t(2 * model_cfg.l))
            throw InputError("case " + c.image.case_id + ": too few slices for l=" + std::to_string(model_cfg.l));
    }

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    result.last_checkpoint = out_dir / "last.ckpt";
    result.best_checkpoint = out_dir / "best.ckpt";
    result.log = out_dir / "train_log.jsonl";
    const std::string hash = config_hash(model_cfg, cfg, manifest);

    SegmentationModel<T> model(model_cfg, variant, cfg.seed);
    SGD<T> opt(cfg.lr, cfg.momentum, cfg.weight_decay);
    std::vector<EpochRecord> log;
    int start_epoch = 1;
    if (resume && std::filesystem::exists(result.last_checkpoint)) {
        const Archive a = read_archive(result.last_checkpoint);
        if (a.meta.value("config_hash", std::string()) != hash)
            throw ConfigError("cannot resume: " + result.last_checkpoint.string() +
                              " was written with a different configuration or dataset");
        model = restore_model<T>(a);
        detail::restore_optimizer(a, model, opt);
        start_epoch = a.meta.at("epoch").get<int>() + 1;
        result.best_epoch = a.meta.value("best_epoch", 0);
        result.best_val_dsc = a.meta.value("best_val_dsc", -1.0);
        for (const auto& r : detail::read_log(result.log))
            if (r.epoch < start_epoch) log.push_back(r);
    }

    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        std::mt19937_64 rng = detail::epoch_rng(cfg.seed, epoch);
        std::vector<std::size_t> order(train_cases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        for (std::size_t idx : order) {
            const LoadedCase& c = train_cases[idx];
            const std::size_t D = c.image.dims.depth;
            const std::size_t S = std::min<std::size_t>(std::size_t(cfg.batch_slices), D);
            std::uniform_int_distribution<std::size_t> start_dist(0, D - S);
            const std::size_t first = start_dist(rng);
            const std::uint64_t aug_seed = rng();
            Tensor<T> x, y;
            if (cfg.augment) {
                const auto [img, msk] = augment(c.image, c.mask, aug_seed);
                x = slice_stack<T>(img, first, S);
                y = mask_stack<T>(msk, first, S);
            } else {
                x = slice_stack<T>(c.image, first, S);
                y = mask_stack<T>(c.mask, first, S);
            }
            const auto [total, l_final, l_orig] = train_step(model, opt, x, y, cfg);
            if (!std::isfinite(total)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", case " << c.image.case_id
                    << " (slices " << first << ".." << first + S - 1 << "): dice(final)=" << l_final
                    << ", dice(original)=" << l_orig << ", aux_loss_weight=" << cfg.aux_loss_weight;
                throw RuntimeError(msg.str());
            }
            loss_sum += total;
            if (hooks.on_step) hooks.on_step(epoch, c.image.case_id, total);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / double(order.size());
        rec.val_dsc = mean_dsc(model, val_cases);
        rec.lr = cfg.lr;
        rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back(rec);
        result.history.push_back(rec);

        const bool improved = rec.val_dsc > result.best_val_dsc;
        if (improved) {
            result.best_val_dsc = rec.val_dsc;
            result.best_epoch = epoch;
        }
        Archive a;
        store_model(a, model);
        a.meta["epoch"] = epoch;
        a.meta["config_hash"] = hash;
        a.meta["best_epoch"] = result.best_epoch;
        a.meta["best_val_dsc"] = result.best_val_dsc;
        a.meta["train"] = nlohmann::json(cfg);
        if (improved) write_archive(a, result.best_checkpoint);
        detail::store_optimizer(a, opt);
        write_archive(a, result.last_checkpoint);
        detail::write_log(result.log, log);
        result.last_epoch = epoch;
    }
    if (result.last_epoch == 0) result.last_epoch = start_epoch - 1;
    return result;
}

// --- evaluation -------------------------------------------------------------

struct EvalOptions {
    Split split = Split::test;
    std::optional<std::filesystem::path> prediction_dir;  ///< write thresholded masks here
    std::size_t workers = 0;                              ///< 0: worker_count()
};

/// Per-case metrics of `model` on one split of the manifest.
template <typename T>
MetricsReport evaluate(const SegmentationModel<T>& model, const Manifest& manifest, const EvalOptions& opt = {}) {
    const auto entries = manifest.split(opt.split);
    if (entries.empty()) throw InputError("manifest has no " + to_string(opt.split) + " split");
    MetricsReport report;
    report.label = to_string(model.variant());
    report.per_case.resize(entries.size());
    if (opt.prediction_dir) std::filesystem::create_directories(*opt.prediction_dir);
    parallel_for(entries.size(), opt.workers ? opt.workers : worker_count(), [&](std::size_t i) {
        const LoadedCase c = load_case(manifest, *entries[i]);
        const MaskVolume pred = predict_mask(model, c.image);
        report.per_case[i] = evaluate_case(entries[i]->case_id, pred, c.mask);
        if (opt.prediction_dir) save_mask(pred, *opt.prediction_dir / (entries[i]->case_id + "_pred"));
    });
    report.provenance["split"] = to_string(opt.split);
    return report;
}

}  // namespace ceseg
