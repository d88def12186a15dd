#pragma once

// Per-epoch metrics and their CSV form. Every mode writes the same columns.

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "t3dnet/core/error.hpp"
#include "t3dnet/core/io.hpp"

namespace t3d::train {

inline constexpr const char* kMetricsHeader = "epoch,split,ce_tiny,ce_aug,kd,hint,total,oa,lr,beta,alpha,selection";

/// Objective a stage optimizes; decides how `total` is composed.
enum class Objective { cross_entropy, augmented, distill, hint, mutual, end_to_end };

inline std::string to_string(Objective o) {
    switch (o) {
        case Objective::cross_entropy: return "ce";
        case Objective::augmented: return "augmented";
        case Objective::distill: return "distill";
        case Objective::hint: return "hint";
        case Objective::mutual: return "mutual";
        case Objective::end_to_end: return "end2end";
    }
    return "?";
}

/// Train rows hold batch-size-weighted means over the epoch; test rows hold
/// the evaluated selection's cross-entropy in ce_tiny and total.
struct EpochMetrics {
    std::uint32_t epoch = 0;
    std::string split;
    double ce_tiny = 0, ce_aug = 0, kd = 0, hint = 0, total = 0;
    double oa = 0;
    double lr = 0, beta = 1, alpha = 0;
    std::string selection;

    bool operator==(const EpochMetrics&) const = default;
};

/// The combination of logged components that `total` must equal.
///   mutual:    ce_tiny + ce_aug + kd           (kd holds both directions)
///   otherwise: alpha * (kd + hint) + (1 - alpha) * (beta * ce_tiny + (1 - beta) * ce_aug)
/// Cross-entropy stages log beta = 1, alpha = 0; distill and hint stages
/// log beta = 1; end-to-end logs the alpha in effect (0 during warm-up).
inline double documented_total(Objective o, const EpochMetrics& m) {
    if (m.split != "train") return m.ce_tiny;
    if (o == Objective::mutual) return m.ce_tiny + m.ce_aug + m.kd;
    const double ce = m.beta * m.ce_tiny + (1.0 - m.beta) * m.ce_aug;
    return m.alpha * (m.kd + m.hint) + (1.0 - m.alpha) * ce;
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string csv_row(const EpochMetrics& m) {
    std::string s = std::to_string(m.epoch) + "," + m.split;
    for (double v : {m.ce_tiny, m.ce_aug, m.kd, m.hint, m.total, m.oa, m.lr, m.beta, m.alpha}) s += "," + format_number(v);
    return s + "," + m.selection;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::string s = std::string(kMetricsHeader) + "\n";
    for (const auto& r : rows) s += csv_row(r) + "\n";
    return s;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path) {
    io::write_text_atomic(path, metrics_csv(rows));
}

/// Parses what metrics_csv writes. A different header is a ConfigError, a bad
/// row a ParseError.
inline std::vector<EpochMetrics> parse_metrics_csv(const std::string& text, const std::string& source = "metrics") {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw ConfigError(source + ": unexpected metrics schema (header '" + line + "')");
    std::vector<EpochMetrics> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 12) throw ParseError(source + ": expected 12 fields, got " + std::to_string(f.size()), lineno);
        EpochMetrics m;
        try {
            m.epoch = static_cast<std::uint32_t>(std::stoul(f[0]));
            m.split = f[1];
            double* dst[] = {&m.ce_tiny, &m.ce_aug, &m.kd, &m.hint, &m.total, &m.oa, &m.lr, &m.beta, &m.alpha};
            for (int i = 0; i < 9; ++i) *dst[i] = std::stod(f[2 + i]);
        } catch (const std::logic_error&) {
            throw ParseError(source + ": malformed number", lineno);
        }
        m.selection = f[11];
        rows.push_back(std::move(m));
    }
    return rows;
}

inline std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_metrics_csv(std::string(bytes.begin(), bytes.end()), path.string());
}

/// Highest test OA in a log (the retained checkpoint's accuracy); -1 when the
/// log has no test rows.
inline double best_test_oa(const std::vector<EpochMetrics>& rows) {
    double best = -1.0;
    for (const auto& r : rows)
        if (r.split == "test" && r.oa > best) best = r.oa;
    return best;
}

}  // namespace t3d::train
