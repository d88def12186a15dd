#pragma once

// Cost / accuracy tables: #Params, FLOPs, OA and accuracy deltas against named
// baseline rows, rendered as Markdown and CSV.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/models/cost.hpp"
#include "t3dnet/models/spec.hpp"
#include "t3dnet/train/metrics.hpp"

namespace t3d::harness {

struct ReportRow {
    std::string name;
    double scale = 1.0;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::optional<double> oa;  // fraction in [0, 1]
};

struct Report {
    std::vector<ReportRow> rows;
    std::vector<std::string> baselines;  // one delta column per name
    std::uint32_t n_points = 1024;
    std::string model_name;

    bool has_accuracy() const {
        for (const auto& r : rows)
            if (r.oa) return true;
        return false;
    }
    const ReportRow& row(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return r;
        throw ConfigError("report has no row named '" + name + "'");
    }
    /// OA(row) - OA(baseline) as a fraction; empty when either lacks OA.
    std::optional<double> delta(const ReportRow& r, const std::string& baseline) const {
        const auto& b = row(baseline);
        if (!r.oa || !b.oa) return std::nullopt;
        return *r.oa - *b.oa;
    }
};

inline std::string scale_label(double s) {
    if (s == 1.0) return "1";
    const double inv = 1.0 / s;
    if (std::abs(inv - std::round(inv)) < 1e-9) return "1/" + std::to_string(static_cast<long>(std::round(inv)));
    return train::format_number(s);
}

inline ReportRow cost_row(const models::SupernetSpec& spec, double scale, std::uint32_t n_points, std::string name = {}) {
    return {name.empty() ? "scale " + scale_label(scale) : std::move(name), scale, models::count_params(spec, scale),
            models::count_flops(spec, scale, n_points), std::nullopt};
}

/// Accuracy row from a metrics log: the retained (best) test OA, costed at the
/// width its test rows evaluate ("full" is scale 1, "tiny" the config's tiny scale).
inline ReportRow accuracy_row(const models::SupernetSpec& spec, const std::string& name,
                              const std::vector<train::EpochMetrics>& log, std::uint32_t n_points) {
    std::string selection;
    for (const auto& r : log)
        if (r.split == "test") {
            if (!selection.empty() && r.selection != selection)
                throw ConfigError("run '" + name + "' evaluates more than one selection");
            selection = r.selection;
        }
    if (selection.empty()) throw ConfigError("run '" + name + "' has no test rows");
    if (selection != "full" && selection != "tiny")
        throw ConfigError("run '" + name + "' evaluates selection '" + selection + "', expected tiny or full");
    ReportRow row = cost_row(spec, selection == "full" ? 1.0 : spec.width_scale_tiny, n_points, name);
    row.oa = train::best_test_oa(log);
    return row;
}

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string human_count(std::uint64_t v) {
    if (v >= 1000000000ULL) return fmt("%.2fG", v / 1e9);
    if (v >= 1000000ULL) return fmt("%.2fM", v / 1e6);
    if (v >= 1000ULL) return fmt("%.1fK", v / 1e3);
    return std::to_string(v);
}

inline std::string percent(std::optional<double> v, bool sign = false) {
    if (!v) return "-";
    return fmt(sign ? "%+.2f" : "%.2f", 100.0 * *v);
}

inline std::string report_markdown(const Report& r) {
    const bool acc = r.has_accuracy();
    std::string s = "Model: " + r.model_name + ", " + std::to_string(r.n_points) + " input points.\n";
    s += std::string(models::kFlopConvention) + "\n\n";
    s += "| model | scale | #Params | FLOPs |";
    std::string sep = "|---|---|---:|---:|";
    if (acc) {
        s += " OA (%) |";
        sep += "---:|";
        for (const auto& b : r.baselines) {
            s += " ΔAcc vs " + b + " (%) |";
            sep += "---:|";
        }
    }
    s += "\n" + sep + "\n";
    for (const auto& row : r.rows) {
        s += "| " + row.name + " | " + scale_label(row.scale) + " | " + human_count(row.params) + " | " +
             human_count(row.flops) + " |";
        if (acc) {
            s += " " + percent(row.oa) + " |";
            for (const auto& b : r.baselines) s += " " + percent(r.delta(row, b), true) + " |";
        }
        s += "\n";
    }
    return s;
}

/// Raw numbers: OA and deltas as fractions, counts unabbreviated.
inline std::string report_csv(const Report& r) {
    const bool acc = r.has_accuracy();
    std::string s = "model,scale,params,flops";
    if (acc) {
        s += ",oa";
        for (const auto& b : r.baselines) s += ",delta_vs_" + b;
    }
    s += "\n";
    auto num = [](std::optional<double> v) { return v ? train::format_number(*v) : std::string(); };
    for (const auto& row : r.rows) {
        s += row.name + "," + train::format_number(row.scale) + "," + std::to_string(row.params) + "," +
             std::to_string(row.flops);
        if (acc) {
            s += "," + num(row.oa);
            for (const auto& b : r.baselines) s += "," + num(r.delta(row, b));
        }
        s += "\n";
    }
    return s;
}

}  // namespace t3d::harness
