#pragma once

// Subcommand bodies shared by the ceseg executable and the acceptance runner.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceseg/checkpoint.hpp"
#include "ceseg/dataset.hpp"
#include "ceseg/phantom.hpp"
#include "ceseg/plot.hpp"
#include "ceseg/report.hpp"
#include "ceseg/run_config.hpp"
#include "ceseg/training.hpp"

namespace ceseg {

/// Writes the phantom cases and either manifest.json (60/20/20) or, with
/// folds > 0, fold_<i>.json for i = 1..folds. Returns the manifest paths.
inline std::vector<std::filesystem::path> cmd_gen_data(const RunConfig& rc, int folds, std::ostream& log) {
    rc.phantom.validate();
    const std::size_t n = std::size_t(rc.phantom.n_cases);
    // Split errors surface before anything is written.
    std::vector<std::vector<Split>> splits;
    if (folds > 0) splits = kfold_splits(n, folds, rc.phantom.seed);
    else splits.push_back(holdout_split(n, rc.phantom.seed));

    const std::filesystem::path dir = rc.paths.data_dir;
    const Manifest base = write_cases(generate_phantom(rc.phantom), splits.front(), dir);
    detail::write_text_file(dir / "phantom.json", nlohmann::ordered_json(nlohmann::json(rc.phantom)).dump(2) + "\n");
    std::vector<std::filesystem::path> out;
    if (folds > 0) {
        for (std::size_t f = 0; f < splits.size(); ++f) {
            const auto p = dir / ("fold_" + std::to_string(f + 1) + ".json");
            save_manifest(with_splits(base, splits[f]), p);
            out.push_back(p);
        }
    } else {
        out.push_back(dir / "manifest.json");
        save_manifest(base, out.back());
    }
    log << "wrote " << n << " cases to " << dir.string() << "\n";
    for (const auto& p : out) log << "manifest: " << p.string() << "\n";
    return out;
}

inline nlohmann::ordered_json parameter_report(const ModelConfig& cfg, Variant v) {
    SegmentationModel<float> model(cfg, v, 0);
    return to_json(count_parameters(model));
}

inline TrainResult cmd_train(const RunConfig& rc, bool resume, std::ostream& log) {
    rc.validate();
    const Manifest manifest = load_manifest(rc.manifest_path());
    const std::filesystem::path out = rc.paths.out_dir;
    std::filesystem::create_directories(out);
    detail::write_text_file(out / "run_config.json", to_json(rc).dump(2) + "\n");
    detail::write_text_file(out / "parameters.json",
                            parameter_report(rc.model, parse_variant(rc.train.variant)).dump(2) + "\n");
    log << "training " << rc.train.variant << " for " << rc.train.epochs << " epochs on "
        << manifest.split(Split::train).size() << " cases -> " << out.string() << "\n";
    const TrainResult r = train(rc.model, rc.train, manifest, out, resume);
    for (const auto& e : r.history)
        log << "epoch " << e.epoch << "  loss " << fmt_number(e.train_loss) << "  val_dsc " << fmt_number(e.val_dsc, 2)
            << "\n";
    log << "best epoch " << r.best_epoch << " (val DSC " << fmt_number(r.best_val_dsc, 2) << ")\n";
    return r;
}

/// Evaluates rc.checkpoint_path() on `split`; writes report.json, report.csv
/// and predictions/ under rc.paths.out_dir. Nothing is written unless the
/// checkpoint loads.
inline MetricsReport cmd_eval(const RunConfig& rc, Split split, std::ostream& log) {
    const auto ckpt = rc.checkpoint_path();
    if (!std::filesystem::exists(ckpt)) throw InputError("checkpoint not found: " + ckpt.string());
    const SegmentationModel<float> model = load_model<float>(ckpt);
    const Manifest manifest = load_manifest(rc.manifest_path());
    const std::filesystem::path out = rc.paths.out_dir;
    EvalOptions opt;
    opt.split = split;
    opt.prediction_dir = out / "predictions";
    MetricsReport report = evaluate(model, manifest, opt);
    report.provenance["checkpoint"] = std::filesystem::absolute(ckpt).string();
    report.provenance["manifest"] = std::filesystem::absolute(rc.manifest_path()).string();
    report.provenance["predictions"] = std::filesystem::absolute(*opt.prediction_dir).string();
    write_report(report, out / "report.json", out / "report.csv");
    for (Metric m : kMetrics) {
        const Summary s = report.aggregate(m);
        log << metric_title(m) << ": " << fmt_number(s.mean, 2) << " ± " << fmt_number(s.sd, 2) << " (n=" << s.n
            << ")\n";
    }
    return report;
}

namespace detail {

inline std::string file_safe(std::string s) {
    for (auto& ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    return s;
}

}  // namespace detail

/**
 * Compares reports[0] against every other report. Writes comparison.csv,
 * comparison.txt, a paired DSC scatter per comparison, loss curves when the
 * training logs sit next to the checkpoints, and three-view overlays for
 * cases whose predictions are on disk for every report.
 */
inline std::string cmd_report(const std::vector<std::filesystem::path>& paths, const std::filesystem::path& out,
                              std::ostream& log) {
    if (paths.size() < 2) throw InputError("report needs at least two report files");
    std::vector<MetricsReport> reports;
    std::map<std::string, int> seen;
    for (const auto& p : paths) {
        reports.push_back(read_report(p));
        auto& r = reports.back();
        if (r.label.empty()) r.label = p.stem().string();
        if (seen[r.label]++) r.label += "#" + std::to_string(seen[r.label]);
    }
    const auto rows = compare_reports(reports);
    const std::string table = comparison_table(reports, rows);
    std::filesystem::create_directories(out);
    detail::write_text_file(out / "comparison.csv", comparisons_csv(rows));
    detail::write_text_file(out / "comparison.txt", table);

    for (std::size_t k = 1; k < reports.size(); ++k) {
        std::map<std::string, double> by_id;
        for (const auto& c : reports[k].per_case) by_id[c.case_id] = c.dsc_pct;
        std::vector<double> a, b;
        for (const auto& c : reports[0].per_case) {
            a.push_back(c.dsc_pct);
            b.push_back(by_id.at(c.case_id));
        }
        plot::paired_scatter(a, b, out / ("dsc_scatter_" + detail::file_safe(reports[0].label) + "_vs_" +
                                          detail::file_safe(reports[k].label) + ".png"));
    }

    std::vector<std::vector<double>> losses;
    for (const auto& r : reports) {
        if (!r.provenance.contains("checkpoint")) continue;
        const auto log_path =
            std::filesystem::path(r.provenance["checkpoint"].get<std::string>()).parent_path() / "train_log.jsonl";
        if (!std::filesystem::exists(log_path)) continue;
        std::vector<double> s;
        for (const auto& e : detail::read_log(log_path)) s.push_back(e.train_loss);
        if (!s.empty()) losses.push_back(std::move(s));
    }
    if (!losses.empty()) plot::line_chart(losses, out / "loss_curves.png");

    std::size_t overlays = 0;
    const auto& ref = reports[0];
    if (ref.provenance.contains("manifest")) {
        const auto manifest_path = std::filesystem::path(ref.provenance["manifest"].get<std::string>());
        if (std::filesystem::exists(manifest_path)) {
            const Manifest manifest = load_manifest(manifest_path);
            for (const auto& c : ref.per_case) {
                const auto it = std::find_if(manifest.cases.begin(), manifest.cases.end(),
                                             [&](const CaseEntry& e) { return e.case_id == c.case_id; });
                if (it == manifest.cases.end()) continue;
                std::vector<MaskVolume> preds;
                for (const auto& r : reports) {
                    if (!r.provenance.contains("predictions")) break;
                    const auto p = std::filesystem::path(r.provenance["predictions"].get<std::string>()) /
                                   (c.case_id + "_pred.json");
                    if (!std::filesystem::exists(p)) break;
                    preds.push_back(load_mask(p));
                }
                if (preds.size() != reports.size()) continue;
                const Volume image = load_volume(manifest.root / it->image);
                const MaskVolume gt = load_mask(manifest.root / it->mask);
                std::vector<const MaskVolume*> ptrs;
                for (const auto& p : preds) ptrs.push_back(&p);
                plot::overlay_panels(image, gt, ptrs, out / "overlays" / (c.case_id + ".png"));
                ++overlays;
            }
        }
    }
    log << table;
    log << "\nwrote " << (out / "comparison.csv").string() << ", " << (out / "comparison.txt").string();
    if (!losses.empty()) log << ", loss_curves.png";
    log << " and " << overlays << " overlay panel(s); contours: ground truth green";
    for (std::size_t k = 0; k < reports.size(); ++k)
        log << ", " << reports[k].label << (k == 0 ? " red" : k == 1 ? " blue" : " colour " + std::to_string(k));
    log << "\n";
    return table;
}

}  // namespace ceseg
