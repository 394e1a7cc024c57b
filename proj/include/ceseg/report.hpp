#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ceseg/errors.hpp"
#include "ceseg/metrics.hpp"
#include "ceseg/volume.hpp"

namespace ceseg {

enum class Metric { dsc, assd, hd95, sensitivity, precision };

inline constexpr std::array<Metric, 5> kMetrics = {Metric::dsc, Metric::assd, Metric::hd95, Metric::sensitivity,
                                                   Metric::precision};

inline const char* metric_key(Metric m) {
    switch (m) {
        case Metric::dsc: return "dsc_pct";
        case Metric::assd: return "assd_mm";
        case Metric::hd95: return "hd95_mm";
        case Metric::sensitivity: return "sensitivity_pct";
        case Metric::precision: return "precision_pct";
    }
    return "?";
}

inline const char* metric_title(Metric m) {
    switch (m) {
        case Metric::dsc: return "DSC (%)";
        case Metric::assd: return "ASSD (mm)";
        case Metric::hd95: return "95HD (mm)";
        case Metric::sensitivity: return "Sensitivity (%)";
        case Metric::precision: return "Precision (%)";
    }
    return "?";
}

inline bool higher_is_better(Metric m) { return m != Metric::assd && m != Metric::hd95; }

struct CaseMetrics {
    std::string case_id;
    double dsc_pct = 0, sensitivity_pct = 0, precision_pct = 0;
    std::optional<double> assd_mm, hd95_mm;
    std::string error;  ///< set when a surface metric could not be computed

    std::optional<double> get(Metric m) const {
        switch (m) {
            case Metric::dsc: return dsc_pct;
            case Metric::assd: return assd_mm;
            case Metric::hd95: return hd95_mm;
            case Metric::sensitivity: return sensitivity_pct;
            case Metric::precision: return precision_pct;
        }
        return std::nullopt;
    }
};

/// All five metrics of one predicted mask against its ground truth. Empty
/// masks leave the surface metrics unset and record the reason.
inline CaseMetrics evaluate_case(const std::string& case_id, const MaskVolume& pred, const MaskVolume& gt) {
    CaseMetrics m;
    m.case_id = case_id;
    m.dsc_pct = dsc_3d(pred, gt);
    m.sensitivity_pct = sensitivity(pred, gt);
    m.precision_pct = precision(pred, gt);
    try {
        const auto d = pooled_surface_distances(pred, gt, gt.spacing);
        m.assd_mm = mean_of(d);
        m.hd95_mm = percentile(d, 95.0);
    } catch (const EmptyMaskError& e) {
        m.error = e.what();
    }
    return m;
}

struct Summary {
    double mean = 0, sd = 0;
    std::size_t n = 0;
};

/// Mean and sample standard deviation over the cases that have the metric.
inline Summary summarize(const std::vector<CaseMetrics>& cases, Metric m) {
    std::vector<double> v;
    for (const auto& c : cases)
        if (auto x = c.get(m)) v.push_back(*x);
    Summary s;
    s.n = v.size();
    if (v.empty()) return s;
    s.mean = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
    return s;
}

struct MetricsReport {
    std::string label;  ///< e.g. variant name
    std::vector<CaseMetrics> per_case;
    nlohmann::ordered_json provenance = nlohmann::ordered_json::object();  ///< checkpoint, manifest, prediction dir

    Summary aggregate(Metric m) const { return summarize(per_case, m); }
};

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["label"] = r.label;
    nlohmann::ordered_json agg;
    for (Metric m : kMetrics) {
        const Summary s = r.aggregate(m);
        agg[metric_key(m)] = {{"mean", s.mean}, {"sd", s.sd}, {"n", s.n}};
    }
    j["aggregate"] = agg;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& c : r.per_case) {
        nlohmann::ordered_json row;
        row["case_id"] = c.case_id;
        for (Metric m : kMetrics) {
            if (auto v = c.get(m)) row[metric_key(m)] = *v;
            else row[metric_key(m)] = nullptr;
        }
        if (!c.error.empty()) row["error"] = c.error;
        rows.push_back(std::move(row));
    }
    j["per_case"] = rows;
    j["provenance"] = r.provenance;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.label = j.value("label", std::string());
        for (const auto& row : j.at("per_case")) {
            CaseMetrics c;
            c.case_id = row.at("case_id").get<std::string>();
            c.dsc_pct = row.at("dsc_pct").get<double>();
            c.sensitivity_pct = row.at("sensitivity_pct").get<double>();
            c.precision_pct = row.at("precision_pct").get<double>();
            if (!row.at("assd_mm").is_null()) c.assd_mm = row.at("assd_mm").get<double>();
            if (!row.at("hd95_mm").is_null()) c.hd95_mm = row.at("hd95_mm").get<double>();
            c.error = row.value("error", std::string());
            r.per_case.push_back(std::move(c));
        }
        if (j.contains("provenance")) r.provenance = j.at("provenance");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report: ") + e.what());
    }
    return r;
}

inline std::string fmt_number(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

inline std::string report_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "case_id";
    for (Metric m : kMetrics) out << ',' << metric_key(m);
    out << ",error\n";
    for (const auto& c : r.per_case) {
        out << c.case_id;
        for (Metric m : kMetrics) {
            out << ',';
            if (auto v = c.get(m)) out << fmt_number(*v, 6);
        }
        out << ',' << c.error << '\n';
    }
    return out.str();
}

inline void write_report(const MetricsReport& r, const std::filesystem::path& json_path,
                         const std::filesystem::path& csv_path) {
    detail::write_text_file(json_path, to_json(r).dump(2) + "\n");
    detail::write_text_file(csv_path, report_csv(r));
}

inline MetricsReport read_report(const std::filesystem::path& p) { return report_from_json(detail::read_json_file(p)); }

// --- comparisons ------------------------------------------------------------

struct Comparison {
    Metric metric{};
    std::string reference, other;
    Summary ref_summary, other_summary;
    std::optional<double> p_value;
    std::string note;  ///< "degenerate-sample" or why no p-value exists
};

/// Throws InputError naming the case ids that are not shared by every report.
inline void require_same_cases(const std::vector<MetricsReport>& reports) {
    std::set<std::string> all;
    for (const auto& r : reports)
        for (const auto& c : r.per_case) all.insert(c.case_id);
    std::vector<std::string> missing;
    for (const auto& id : all)
        for (const auto& r : reports) {
            const bool has = std::any_of(r.per_case.begin(), r.per_case.end(),
                                         [&](const CaseMetrics& c) { return c.case_id == id; });
            if (!has) {
                missing.push_back(id + " (missing from '" + r.label + "')");
            }
        }
    if (!missing.empty()) {
        std::string msg = "reports do not share case ids:";
        for (const auto& m : missing) msg += " " + m;
        throw InputError(msg);
    }
}

/// One row per metric for every non-reference report against reports[0].
inline std::vector<Comparison> compare_reports(const std::vector<MetricsReport>& reports) {
    if (reports.size() < 2) throw InputError("report comparison needs at least two reports");
    require_same_cases(reports);
    const MetricsReport& ref = reports.front();
    std::vector<Comparison> out;
    for (std::size_t k = 1; k < reports.size(); ++k) {
        const MetricsReport& other = reports[k];
        std::map<std::string, const CaseMetrics*> by_id;
        for (const auto& c : other.per_case) by_id[c.case_id] = &c;
        for (Metric m : kMetrics) {
            Comparison cmp;
            cmp.metric = m;
            cmp.reference = ref.label;
            cmp.other = other.label;
            cmp.ref_summary = ref.aggregate(m);
            cmp.other_summary = other.aggregate(m);
            std::vector<double> a, b;
            for (const auto& c : ref.per_case) {
                const auto x = c.get(m), y = by_id.at(c.case_id)->get(m);
                if (x && y) {
                    a.push_back(*x);
                    b.push_back(*y);
                }
            }
            try {
                cmp.p_value = paired_wilcoxon(a, b);
            } catch (const DegenerateSampleError&) {
                cmp.note = "degenerate-sample";
            } catch (const InputError& e) {
                cmp.note = e.what();
            }
            out.push_back(std::move(cmp));
        }
    }
    return out;
}

inline std::string comparisons_csv(const std::vector<Comparison>& rows) {
    std::ostringstream out;
    out << "metric,reference,other,reference_mean,reference_sd,other_mean,other_sd,p_value,note\n";
    for (const auto& r : rows) {
        out << metric_key(r.metric) << ',' << r.reference << ',' << r.other << ',' << fmt_number(r.ref_summary.mean)
            << ',' << fmt_number(r.ref_summary.sd) << ',' << fmt_number(r.other_summary.mean) << ','
            << fmt_number(r.other_summary.sd) << ',' << (r.p_value ? fmt_number(*r.p_value, 6) : std::string())
            << ',' << r.note << '\n';
    }
    return out.str();
}

/**
 * Plain-text table with one row per report and "mean ± sd" per metric. The
 * best mean per column is wrapped in **; a trailing * marks reports that
 * differ from reports[0] at p < 0.05.
 */
inline std::string comparison_table(const std::vector<MetricsReport>& reports,
                                    const std::vector<Comparison>& comparisons) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"Method"};
    for (Metric m : kMetrics) header.push_back(metric_title(m));
    cells.push_back(header);
    for (std::size_t k = 0; k < reports.size(); ++k) {
        std::vector<std::string> row{reports[k].label};
        for (Metric m : kMetrics) {
            const Summary s = reports[k].aggregate(m);
            bool best = true;
            for (const auto& other : reports) {
                const double o = other.aggregate(m).mean;
                if (higher_is_better(m) ? o > s.mean : o < s.mean) best = false;
            }
            std::string cell = fmt_number(s.mean, 2) + " ± " + fmt_number(s.sd, 2);
            if (best) cell = "**" + cell + "**";
            if (k > 0)
                for (const auto& c : comparisons)
                    if (c.other == reports[k].label && c.metric == m && c.p_value && *c.p_value < 0.05) cell += "*";
            row.push_back(cell);
        }
        cells.push_back(row);
    }
    std::vector<std::size_t> width(header.size(), 0);
    auto display_width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
        return w;
    };
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], display_width(row[i]));
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t i = 0; i < cells[r].size(); ++i) {
            out << cells[r][i] << std::string(width[i] - display_width(cells[r][i]) + 2, ' ');
        }
        out << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            out << std::string(total, '-') << '\n';
        }
    }
    out << "\np-values (Wilcoxon signed-rank vs " << reports.front().label << "):\n";
    for (const auto& c : comparisons) {
        out << "  " << c.other << "  " << metric_key(c.metric) << "  "
            << (c.p_value ? fmt_number(*c.p_value, 4) : c.note) << '\n';
    }
    return out.str();
}

}  // namespace ceseg
